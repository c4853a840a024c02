//! Seeded generators for the dependence processes.
//!
//! A generator is built once for a fixed `n` (precomputing Cholesky factors,
//! graphs and pilot means) and then maps a replication seed to a de-meaned
//! [`SampleArray`].

pub mod diffusion;
pub mod graph;
pub mod locations;
pub mod matern;
mod processes;
pub mod spec;

pub use diffusion::{
    block_sizes, gen_sbm_diffusion, gen_sir, infection_probability, sir_with_seeds, DiffusionOutcome, InfectionProbs,
    SbmParams, SbmRegime, SbmSeeding, SeedRule,
};
pub use graph::{GraphMeta, GraphTopology};
pub use locations::{Locations, Metric};
pub use matern::{bessel_k, matern_bessel, matern_closed_form, MaternParams};
pub use processes::*;
pub use spec::{GraphSpec, LocationSpec, ModelSpec};

use crate::array::{ModelId, SampleArray};
use crate::error::{invalid, Result};
use crate::kernel::CovKernel;
use crate::rng::SimRng;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

/// Mean-zero innovation or shock law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum Law {
    Normal {
        sd: f64,
    },
    /// `+-1` with equal probability.
    Rademacher,
    /// `Exp(rate) - 1/rate`.
    CenteredExponential {
        rate: f64,
    },
    /// `Bernoulli(prob) - prob`.
    CenteredBernoulli {
        prob: f64,
    },
}

impl Default for Law {
    fn default() -> Self {
        Law::Normal { sd: 1.0 }
    }
}

impl Law {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Law::Normal { sd } => sd >= 0.0 && sd.is_finite(),
            Law::Rademacher => true,
            Law::CenteredExponential { rate } => rate > 0.0 && rate.is_finite(),
            Law::CenteredBernoulli { prob } => (0.0..=1.0).contains(&prob),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid law parameters {self:?}")))
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Law::Normal { sd } => sd * sd,
            Law::Rademacher => 1.0,
            Law::CenteredExponential { rate } => 1.0 / (rate * rate),
            Law::CenteredBernoulli { prob } => prob * (1.0 - prob),
        }
    }

    #[inline]
    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match *self {
            Law::Normal { sd } => sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng),
            Law::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Law::CenteredExponential { rate } => (<Exp1 as Distribution<f64>>::sample(&Exp1, rng) - 1.0) / rate,
            Law::CenteredBernoulli { prob } => f64::from(u8::from(rng.random::<f64>() < prob)) - prob,
        }
    }

    /// True when the law is a point mass.
    pub fn degenerate(&self) -> bool {
        self.variance() == 0.0
    }
}

/// A built generator for fixed `n`.
pub trait Generator: Send + Sync {
    fn model_id(&self) -> ModelId;
    fn n(&self) -> usize;
    fn p(&self) -> usize {
        1
    }
    /// One replication; a pure function of `seed`.
    fn generate(&self, seed: u64) -> SampleArray;
    /// Exact covariance kernel, when one is known.
    fn kernel(&self) -> Option<CovKernel>;
    fn positively_associated(&self) -> bool;
    fn warnings(&self) -> Vec<String> {
        Vec::new()
    }
    fn graph(&self) -> Option<&GraphTopology> {
        None
    }
    fn locations(&self) -> Option<&Locations> {
        None
    }
    /// Block label per node, for block-structured models.
    fn blocks(&self) -> Option<Vec<usize>> {
        None
    }
}
