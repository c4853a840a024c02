//! Config-level model descriptions, sized at build time.

use super::diffusion::{SbmParams, SbmSeeding, SeedRule};
use super::graph::GraphTopology;
use super::locations::Locations;
use super::matern::MaternParams;
use super::processes::{AndrewsAr, EdgeShockGraph, LatticeField, MDependent, MaternGp, SbmDiffusion, SirDiffusion};
use super::{Generator, Law};
use crate::array::ModelId;
use crate::error::{invalid, Result};
use crate::rng::{derive_seed, stream};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Path,
    /// Node 0 joined to the other `n - 1` nodes.
    Star,
    Complete,
    ErdosRenyi {
        mean_degree: f64,
    },
    Sbm {
        blocks: usize,
        p_in: f64,
        p_ac: f64,
    },
    /// Edge list with a JSON sidecar; its node count must equal `n`.
    File {
        path: PathBuf,
    },
}

impl GraphSpec {
    pub fn build(&self, n: usize, seed: u64) -> Result<GraphTopology> {
        match self {
            GraphSpec::Path => Ok(GraphTopology::path(n)),
            GraphSpec::Star => Ok(GraphTopology::star(n.saturating_sub(1))),
            GraphSpec::Complete => Ok(GraphTopology::complete(n)),
            GraphSpec::ErdosRenyi { mean_degree } => {
                if n < 2 || !(*mean_degree >= 0.0) || *mean_degree > (n - 1) as f64 {
                    return Err(invalid(format!("mean degree {mean_degree} infeasible for n={n}")));
                }
                GraphTopology::erdos_renyi(n, mean_degree / (n - 1) as f64, seed)
            }
            GraphSpec::Sbm { blocks, p_in, p_ac } => {
                if *blocks == 0 || *blocks > n {
                    return Err(invalid(format!("{blocks} blocks for n={n}")));
                }
                GraphTopology::sbm(&super::block_sizes(n, *blocks), *p_in, *p_ac, seed)
            }
            GraphSpec::File { path } => {
                let g = GraphTopology::read_files(path)?;
                if g.n() != n {
                    return Err(invalid(format!("graph file has {} nodes, expected {n}", g.n())));
                }
                Ok(g)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LocationSpec {
    Line {
        spacing: f64,
    },
    /// Square grid; `n` must be a perfect square.
    Grid {
        spacing: f64,
    },
    /// Headerless CSV of coordinates; its row count must equal `n`.
    File {
        path: PathBuf,
    },
}

impl LocationSpec {
    pub fn build(&self, n: usize) -> Result<Locations> {
        match self {
            LocationSpec::Line { spacing } => Ok(Locations::line(n, *spacing)),
            LocationSpec::Grid { spacing } => {
                let side = (n as f64).sqrt().round() as usize;
                if side * side != n {
                    return Err(invalid(format!("grid locations need a square n, got {n}")));
                }
                Ok(Locations::grid(side, side, *spacing))
            }
            LocationSpec::File { path } => {
                let l = Locations::read_csv(std::fs::File::open(path)?)?;
                if l.len() != n {
                    return Err(invalid(format!("location file has {} rows, expected {n}", l.len())));
                }
                Ok(l)
            }
        }
    }
}

/// Number of SBM blocks as a function of `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlockCount {
    Fixed(usize),
    Rule(BlockRule),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockRule {
    /// `ceil(sqrt(n))`.
    Sqrt,
}

impl BlockCount {
    pub fn at(&self, n: usize) -> usize {
        match self {
            BlockCount::Fixed(k) => *k,
            BlockCount::Rule(BlockRule::Sqrt) => (n as f64).sqrt().ceil() as usize,
        }
    }
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

fn pilot() -> usize {
    2000
}

fn bernoulli_seeding() -> SbmSeeding {
    SbmSeeding::Bernoulli
}

fn c1() -> f64 {
    2.0
}

fn c2() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    MDependent {
        weights: Vec<f64>,
        #[serde(default)]
        innovation: Law,
    },
    AndrewsAr {
        rho: f64,
        q: f64,
        #[serde(default)]
        burn_in: Option<usize>,
    },
    LatticeField {
        #[serde(default = "one")]
        dim: usize,
        rho0: f64,
        delta: f64,
        #[serde(default = "unit")]
        sigma2: f64,
    },
    EdgeShockGraph {
        graph: GraphSpec,
        #[serde(default)]
        shock: Law,
    },
    SirDiffusion {
        graph: GraphSpec,
        seeds: SeedRule,
        q: f64,
        /// Unbounded when absent.
        #[serde(default)]
        periods: Option<usize>,
        #[serde(default = "pilot")]
        pilot_replications: usize,
    },
    SbmDiffusion {
        blocks: BlockCount,
        /// Within-block edge probability; alternatively `within`.
        #[serde(default)]
        p_in: Option<f64>,
        /// Target `p_in * (n / k) * q`.
        #[serde(default)]
        within: Option<f64>,
        /// Across-block edge probability; alternatively `across`.
        #[serde(default)]
        p_ac: Option<f64>,
        /// Target `p_ac * n^2 * q`.
        #[serde(default)]
        across: Option<f64>,
        q: f64,
        #[serde(default = "bernoulli_seeding")]
        seeding: SbmSeeding,
        #[serde(default)]
        periods: Option<usize>,
        #[serde(default = "c1")]
        c1: f64,
        #[serde(default = "c2")]
        c2: f64,
        #[serde(default = "pilot")]
        pilot_replications: usize,
    },
    MaternGp {
        locations: LocationSpec,
        sigma2: f64,
        phi: f64,
        nu: f64,
        #[serde(default)]
        tau2: f64,
        #[serde(default = "unit")]
        min_separation: f64,
    },
}

impl ModelSpec {
    pub fn model_id(&self) -> ModelId {
        match self {
            ModelSpec::MDependent { .. } => ModelId::MDependent,
            ModelSpec::AndrewsAr { .. } => ModelId::AndrewsAr,
            ModelSpec::LatticeField { .. } => ModelId::LatticeField,
            ModelSpec::EdgeShockGraph { .. } => ModelId::EdgeShockGraph,
            ModelSpec::SirDiffusion { .. } => ModelId::SirDiffusion,
            ModelSpec::SbmDiffusion { .. } => ModelId::SbmDiffusion,
            ModelSpec::MaternGp { .. } => ModelId::MaternGp,
        }
    }

    /// Cheap parameter checks that do not need `n`.
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::MDependent { weights, innovation } => {
                if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) {
                    return Err(invalid("weights must be non-empty and finite"));
                }
                innovation.validate()
            }
            ModelSpec::AndrewsAr { rho, q, .. } => AndrewsAr::new(1, *rho, *q, Some(0)).map(|_| ()),
            ModelSpec::LatticeField {
                dim,
                rho0,
                delta,
                sigma2,
            } => {
                if !(1..=2).contains(dim) || !(*rho0 > 0.0 && *delta > 0.0 && *sigma2 > 0.0) {
                    return Err(invalid("lattice field needs dim in {1, 2} and rho0, delta, sigma2 > 0"));
                }
                Ok(())
            }
            ModelSpec::EdgeShockGraph { shock, .. } => shock.validate(),
            ModelSpec::SirDiffusion {
                q, pilot_replications, ..
            } => {
                if !(0.0..=1.0).contains(q) || *pilot_replications == 0 {
                    return Err(invalid("sir needs q in [0, 1] and positive pilot replications"));
                }
                Ok(())
            }
            ModelSpec::SbmDiffusion {
                p_in,
                within,
                p_ac,
                across,
                q,
                pilot_replications,
                ..
            } => {
                if p_in.is_some() == within.is_some() {
                    return Err(invalid("give exactly one of p_in and within"));
                }
                if p_ac.is_some() == across.is_some() {
                    return Err(invalid("give exactly one of p_ac and across"));
                }
                if !(*q > 0.0 && *q <= 1.0) || *pilot_replications == 0 {
                    return Err(invalid("sbm needs q in (0, 1] and positive pilot replications"));
                }
                Ok(())
            }
            ModelSpec::MaternGp {
                sigma2,
                phi,
                nu,
                tau2,
                min_separation,
                ..
            } => {
                MaternParams {
                    sigma2: *sigma2,
                    phi: *phi,
                    nu: *nu,
                }
                .validate()?;
                if !(*tau2 >= 0.0 && *min_separation > 0.0) {
                    return Err(invalid("matern needs tau2 >= 0 and min_separation > 0"));
                }
                Ok(())
            }
        }
    }

    /// SBM parameters at size `n`.
    pub fn sbm_params(&self, n: usize) -> Result<SbmParams> {
        let ModelSpec::SbmDiffusion {
            blocks,
            p_in,
            within,
            p_ac,
            across,
            q,
            seeding,
            periods,
            c1,
            c2,
            ..
        } = self
        else {
            return Err(invalid("not an sbm model"));
        };
        let k = blocks.at(n);
        let b = n as f64 / k as f64;
        let p_in = p_in.unwrap_or_else(|| (within.unwrap() / (b * q)).min(1.0));
        let p_ac = p_ac.unwrap_or_else(|| (across.unwrap() / ((n as f64).powi(2) * q)).min(1.0));
        let params = SbmParams {
            n,
            k,
            p_in,
            p_ac,
            q: *q,
            seeding: *seeding,
            periods: *periods,
            c1: *c1,
            c2: *c2,
        };
        params.validate()?;
        Ok(params)
    }

    /// Builds the generator at size `n`. Graphs and pilot means draw from
    /// streams derived from `master`.
    pub fn build(&self, n: usize, master: u64) -> Result<Arc<dyn Generator>> {
        self.validate()?;
        if n == 0 {
            return Err(invalid("n must be positive"));
        }
        let graph_seed = derive_seed(master, stream::GRAPH, n as u64);
        let pilot_seed = derive_seed(master, stream::PILOT_MEAN, n as u64);
        Ok(match self {
            ModelSpec::MDependent { weights, innovation } => {
                Arc::new(MDependent::new(n, weights.clone(), *innovation)?)
            }
            ModelSpec::AndrewsAr { rho, q, burn_in } => Arc::new(AndrewsAr::new(n, *rho, *q, *burn_in)?),
            ModelSpec::LatticeField {
                dim,
                rho0,
                delta,
                sigma2,
            } => Arc::new(LatticeField::new(n, *dim, *rho0, *delta, *sigma2)?),
            ModelSpec::EdgeShockGraph { graph, shock } => {
                Arc::new(EdgeShockGraph::new(graph.build(n, graph_seed)?, *shock)?)
            }
            ModelSpec::SirDiffusion {
                graph,
                seeds,
                q,
                periods,
                pilot_replications,
            } => Arc::new(SirDiffusion::new(
                graph.build(n, graph_seed)?,
                seeds.clone(),
                *q,
                periods.unwrap_or(n),
                *pilot_replications,
                pilot_seed,
            )?),
            ModelSpec::SbmDiffusion { pilot_replications, .. } => {
                Arc::new(SbmDiffusion::new(self.sbm_params(n)?, *pilot_replications, pilot_seed)?)
            }
            ModelSpec::MaternGp {
                locations,
                sigma2,
                phi,
                nu,
                tau2,
                min_separation,
            } => Arc::new(MaternGp::new(
                locations.build(n)?,
                MaternParams {
                    sigma2: *sigma2,
                    phi: *phi,
                    nu: *nu,
                },
                *tau2,
                *min_separation,
            )?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tagged_toml() {
        let s: ModelSpec = toml::from_str(
            r#"
            kind = "m_dependent"
            weights = [1.0, 0.5]
            innovation = { law = "rademacher" }
            "#,
        )
        .unwrap();
        assert_eq!(s.model_id(), ModelId::MDependent);
        let bad = toml::from_str::<ModelSpec>(
            r#"
            kind = "andrews_ar"
            rho = 0.5
            q = 0.5
            extra = 1
            "#,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn sbm_rates_from_targets() {
        let s: ModelSpec = toml::from_str(
            r#"
            kind = "sbm_diffusion"
            blocks = "sqrt"
            within = 3.0
            across = 0.05
            q = 0.5
            "#,
        )
        .unwrap();
        let p = s.sbm_params(1024).unwrap();
        assert_eq!(p.k, 32);
        assert!((p.p_in * 32.0 * 0.5 - 3.0).abs() < 1e-12);
        let fixed: ModelSpec = toml::from_str(
            r#"
            kind = "sbm_diffusion"
            blocks = 4
            p_in = 0.1
            p_ac = 0.0
            q = 0.5
            "#,
        )
        .unwrap();
        assert_eq!(fixed.sbm_params(1000).unwrap().k, 4);
    }

    #[test]
    fn star_graph_has_n_nodes() {
        assert_eq!(GraphSpec::Star.build(6, 0).unwrap().n(), 6);
    }
}
