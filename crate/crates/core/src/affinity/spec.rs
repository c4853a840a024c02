//! Config-level recipe descriptions, resolved against a built model.

use super::{
    block_set, distance_ball, epsilon_schedule, graph_neighborhood, hybrid_set, infection_ball, m_ball, singleton,
    AffinityMap, DecayBound,
};
use crate::error::{invalid, Result};
use crate::models::{Generator, Metric, ModelSpec};
use crate::rng::{derive_seed, stream};
use serde::{Deserialize, Serialize};

/// A fixed threshold or the schedule `1 / (rho0^d n^gamma)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Fixed(f64),
    Schedule { gamma: f64 },
}

impl Default for EpsilonSpec {
    fn default() -> Self {
        EpsilonSpec::Schedule { gamma: 0.9 }
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case", deny_unknown_fields)]
pub enum AffinitySpec {
    Singleton,
    MBall {
        m: usize,
    },
    DistanceBall {
        #[serde(default)]
        epsilon: EpsilonSpec,
        /// Defaults to the model's own covariance bound.
        #[serde(default)]
        decay: Option<DecayBound>,
        #[serde(default)]
        metric: Option<Metric>,
    },
    GraphNeighborhood {
        #[serde(default = "one")]
        r: usize,
    },
    InfectionBall {
        epsilon: f64,
        replications: usize,
    },
    BlockSet,
    HybridSet {
        epsilon: f64,
        #[serde(default)]
        decay: Option<DecayBound>,
        #[serde(default)]
        metric: Option<Metric>,
        groups: Vec<usize>,
        affinity: Vec<Vec<f64>>,
    },
}

impl AffinitySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            AffinitySpec::DistanceBall { epsilon, decay, .. } => {
                check_eps(epsilon)?;
                decay.map_or(Ok(()), |d| d.validate())
            }
            AffinitySpec::GraphNeighborhood { r } if *r == 0 => Err(invalid("graph neighborhood radius must be >= 1")),
            AffinitySpec::InfectionBall { epsilon, .. } if !(*epsilon > 0.0) => {
                Err(invalid("epsilon must be positive"))
            }
            AffinitySpec::HybridSet { epsilon, affinity, .. } => {
                if !(*epsilon > 0.0) {
                    return Err(invalid("epsilon must be positive"));
                }
                super::check_group_matrix(affinity)
            }
            _ => Ok(()),
        }
    }

    /// Builds the map for a generator built from `model` at size `n`.
    pub fn build(&self, model: &ModelSpec, g: &dyn Generator, master: u64) -> Result<AffinityMap> {
        let n = g.n();
        match self {
            AffinitySpec::Singleton => Ok(singleton(n, g.p())),
            AffinitySpec::MBall { m } => Ok(m_ball(n, *m)),
            AffinitySpec::DistanceBall { epsilon, decay, metric } => {
                let locs = g
                    .locations()
                    .ok_or_else(|| invalid("distance_ball needs a model with locations"))?;
                let decay = decay
                    .or_else(|| model_decay(model))
                    .ok_or_else(|| invalid("distance_ball needs a decay bound for this model"))?;
                let metric = metric.unwrap_or_else(|| model_metric(model));
                let eps = resolve_eps(epsilon, n, locs, metric);
                distance_ball(locs, eps, decay, metric)
            }
            AffinitySpec::GraphNeighborhood { r } => {
                let graph = g
                    .graph()
                    .ok_or_else(|| invalid("graph_neighborhood needs a graph model"))?;
                graph_neighborhood(graph, *r)
            }
            AffinitySpec::InfectionBall { epsilon, replications } => {
                let ModelSpec::SirDiffusion { q, periods, .. } = model else {
                    return Err(invalid("infection_ball needs an sir_diffusion model"));
                };
                let graph = g.graph().expect("sir models carry a graph");
                let seed = derive_seed(master, stream::PROBE, n as u64);
                infection_ball(graph, *q, periods.unwrap_or(n), *epsilon, *replications, seed)
            }
            AffinitySpec::BlockSet => {
                let labels = g
                    .blocks()
                    .ok_or_else(|| invalid("block_set needs a block-structured model"))?;
                block_set(&labels, g.p())
            }
            AffinitySpec::HybridSet {
                epsilon,
                decay,
                metric,
                groups,
                affinity,
            } => {
                let locs = g
                    .locations()
                    .ok_or_else(|| invalid("hybrid_set needs a model with locations"))?;
                let decay = decay
                    .or_else(|| model_decay(model))
                    .ok_or_else(|| invalid("hybrid_set needs a decay bound for this model"))?;
                hybrid_set(
                    locs,
                    *epsilon,
                    decay,
                    metric.unwrap_or_else(|| model_metric(model)),
                    groups,
                    affinity,
                )
            }
        }
    }
}

fn check_eps(e: &EpsilonSpec) -> Result<()> {
    match e {
        EpsilonSpec::Fixed(v) if !(*v > 0.0) => Err(invalid("epsilon must be positive")),
        EpsilonSpec::Schedule { gamma } if !(*gamma > 0.0 && *gamma < 1.0) => {
            Err(invalid("epsilon schedule gamma must be in (0, 1)"))
        }
        _ => Ok(()),
    }
}

fn resolve_eps(e: &EpsilonSpec, n: usize, locs: &crate::models::Locations, metric: Metric) -> f64 {
    match e {
        EpsilonSpec::Fixed(v) => *v,
        EpsilonSpec::Schedule { gamma } => {
            let rho0 = locs.min_separation(metric).map(|t| t.2).unwrap_or(1.0);
            epsilon_schedule(n, rho0, locs.dim(), *gamma)
        }
    }
}

/// The covariance bound implied by the model's analytic kernel.
pub fn model_decay(model: &ModelSpec) -> Option<DecayBound> {
    match model {
        ModelSpec::LatticeField {
            dim,
            rho0,
            delta,
            sigma2,
        } => Some(DecayBound::Shifted {
            amplitude: *sigma2,
            spacing: *rho0,
            exponent: *dim as f64 + delta,
        }),
        ModelSpec::MaternGp { sigma2, phi, nu, .. } => Some(DecayBound::Matern {
            sigma2: *sigma2,
            phi: *phi,
            nu: *nu,
        }),
        _ => None,
    }
}

fn model_metric(model: &ModelSpec) -> Metric {
    match model {
        ModelSpec::LatticeField { .. } => Metric::Chebyshev,
        _ => Metric::Euclidean,
    }
}
