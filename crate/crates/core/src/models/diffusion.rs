//! Discrete-time SIR on a graph and its stochastic-block-model variant.
//!
//! Transmission along directed edge `e` in a run keyed by `key` happens iff
//! `keyed_uniform(key, e) < q`. Each directed edge is attempted at most once
//! (an infector is active for exactly one period), so one uniform per edge
//! realizes the process, and runs sharing a key are coupled: infected sets
//! are monotone in the seed set and in `q`.

use super::graph::{sbm_edges, GraphTopology};
use crate::error::{invalid, Result};
use crate::rng::{keyed_uniform, mix64, rng_from_seed, SimRng};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeedRule {
    /// A uniformly random set of exactly `count` nodes.
    Count {
        count: usize,
    },
    /// Each node independently with probability `prob`.
    Bernoulli {
        prob: f64,
    },
    Fixed {
        nodes: Vec<usize>,
    },
}

impl SeedRule {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            SeedRule::Count { count } if *count > n => Err(invalid(format!("{count} seeds for {n} nodes"))),
            SeedRule::Bernoulli { prob } if !(0.0..=1.0).contains(prob) => {
                Err(invalid(format!("seed probability {prob} not in [0, 1]")))
            }
            SeedRule::Fixed { nodes } if nodes.iter().any(|&j| j >= n) => Err(invalid("fixed seed node out of range")),
            _ => Ok(()),
        }
    }

    pub fn draw(&self, n: usize, rng: &mut SimRng) -> Vec<usize> {
        let mut s = match self {
            SeedRule::Count { count } => sample(rng, n, *count).into_vec(),
            SeedRule::Bernoulli { prob } => (0..n).filter(|_| rng.random::<f64>() < *prob).collect(),
            SeedRule::Fixed { nodes } => nodes.clone(),
        };
        s.sort_unstable();
        s.dedup();
        s
    }

    /// `E[1{i is a seed}]` for a node, when it does not depend on the node.
    pub fn inclusion_probability(&self, n: usize) -> Option<f64> {
        match self {
            SeedRule::Count { count } => Some(*count as f64 / n as f64),
            SeedRule::Bernoulli { prob } => Some(*prob),
            SeedRule::Fixed { .. } => None,
        }
    }

    /// Positive association of the outcome vector holds when seeds are drawn
    /// independently (or fixed); a fixed-size uniform draw is negatively
    /// associated across nodes.
    pub fn independent(&self) -> bool {
        !matches!(self, SeedRule::Count { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionOutcome {
    /// `X_i`, ever infected.
    pub infected: Vec<bool>,
    pub seeds: Vec<usize>,
    pub periods: usize,
}

impl DiffusionOutcome {
    pub fn count(&self) -> usize {
        self.infected.iter().filter(|&&x| x).count()
    }
}

/// Reused BFS buffers.
pub(crate) struct Spread {
    dist: Vec<u32>,
    touched: Vec<usize>,
    frontier: Vec<usize>,
    next: Vec<usize>,
}

impl Spread {
    pub(crate) fn new(n: usize) -> Self {
        Spread {
            dist: vec![u32::MAX; n],
            touched: Vec::new(),
            frontier: Vec::new(),
            next: Vec::new(),
        }
    }

    fn reset(&mut self) {
        for &i in &self.touched {
            self.dist[i] = u32::MAX;
        }
        self.touched.clear();
    }

    /// Runs the keyed process and returns the infected nodes (unsorted).
    pub(crate) fn run(&mut self, g: &GraphTopology, seeds: &[usize], q: f64, periods: usize, key: u64) -> &[usize] {
        self.reset();
        self.frontier.clear();
        for &s in seeds {
            if self.dist[s] == u32::MAX {
                self.dist[s] = 0;
                self.touched.push(s);
                self.frontier.push(s);
            }
        }
        let mut t = 0;
        while t < periods && !self.frontier.is_empty() && q > 0.0 {
            self.next.clear();
            for &u in &self.frontier {
                for e in g.out_edges(u) {
                    let v = g.target(e);
                    if self.dist[v] == u32::MAX && keyed_uniform(key, e as u64) < q {
                        self.dist[v] = t as u32 + 1;
                        self.touched.push(v);
                        self.next.push(v);
                    }
                }
            }
            std::mem::swap(&mut self.frontier, &mut self.next);
            t += 1;
        }
        &self.touched
    }
}

/// Key for the edge uniforms of the run seeded by `seed`.
pub fn run_key(seed: u64) -> u64 {
    mix64(seed ^ 0x5bd1_e995_0000_0001)
}

/// One SIR run. Seeds come from `rule` using the generator seeded by `seed`;
/// transmissions use uniforms keyed by `seed`.
pub fn gen_sir(g: &GraphTopology, rule: &SeedRule, q: f64, periods: usize, seed: u64) -> Result<DiffusionOutcome> {
    check_q(q)?;
    rule.validate(g.n())?;
    let mut rng = rng_from_seed(seed);
    let seeds = rule.draw(g.n(), &mut rng);
    Ok(sir_with_seeds(g, &seeds, q, periods, run_key(seed)))
}

/// SIR from given seeds under an explicit uniform key.
pub fn sir_with_seeds(g: &GraphTopology, seeds: &[usize], q: f64, periods: usize, key: u64) -> DiffusionOutcome {
    let mut spread = Spread::new(g.n());
    let mut infected = vec![false; g.n()];
    for &i in spread.run(g, seeds, q, periods, key) {
        infected[i] = true;
    }
    DiffusionOutcome {
        infected,
        seeds: seeds.to_vec(),
        periods,
    }
}

/// Warnings for a run configuration: too few periods to cross the graph.
pub fn sir_warnings(g: &GraphTopology, periods: usize) -> Vec<String> {
    match g.diameter() {
        Some(d) if periods < d => vec![format!("periods {periods} below graph diameter {d}")],
        _ => Vec::new(),
    }
}

fn check_q(q: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid(format!("transmission probability {q} not in [0, 1]")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfectionProbs {
    pub prob: Vec<f64>,
    pub se: Vec<f64>,
    pub replications: usize,
}

/// Monte Carlo `Pr(X_i = 1)` when `j` is the only seed.
pub fn infection_probability(
    g: &GraphTopology,
    q: f64,
    periods: usize,
    j: usize,
    reps: usize,
    seed: u64,
) -> Result<InfectionProbs> {
    check_q(q)?;
    if reps == 0 {
        return Err(invalid("need at least one replication"));
    }
    if j >= g.n() {
        return Err(invalid(format!("seed node {j} out of range")));
    }
    let counts = infection_counts(g, q, periods, j, reps, seed);
    let r = reps as f64;
    let prob: Vec<f64> = counts.iter().map(|&c| c as f64 / r).collect();
    let se = prob.iter().map(|&p| (p * (1.0 - p) / r).sqrt()).collect();
    Ok(InfectionProbs {
        prob,
        se,
        replications: reps,
    })
}

pub(crate) fn infection_counts(
    g: &GraphTopology,
    q: f64,
    periods: usize,
    j: usize,
    reps: usize,
    seed: u64,
) -> Vec<u32> {
    let n = g.n();
    const CHUNK: usize = 256;
    let chunks: Vec<Vec<u32>> = (0..reps.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u32; n];
            let mut spread = Spread::new(n);
            for r in c * CHUNK..((c + 1) * CHUNK).min(reps) {
                let key = run_key(crate::rng::derive_seed(seed, j as u64, r as u64));
                for &i in spread.run(g, &[j], q, periods, key) {
                    counts[i] += 1;
                }
            }
            counts
        })
        .collect();
    let mut total = vec![0u32; n];
    for c in chunks {
        for (t, v) in total.iter_mut().zip(c) {
            *t += v;
        }
    }
    total
}

/// How seeds are placed on an SBM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SbmSeeding {
    /// Exactly `ceil(k / 2)` uniformly random seeds.
    Count,
    /// Each node independently with probability `k / (2 n)`.
    Bernoulli,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmParams {
    pub n: usize,
    pub k: usize,
    pub p_in: f64,
    pub p_ac: f64,
    pub q: f64,
    #[serde(default = "default_seeding")]
    pub seeding: SbmSeeding,
    /// Unbounded when absent.
    #[serde(default)]
    pub periods: Option<usize>,
    #[serde(default = "default_c1")]
    pub c1: f64,
    #[serde(default = "default_c2")]
    pub c2: f64,
}

fn default_seeding() -> SbmSeeding {
    SbmSeeding::Count
}

fn default_c1() -> f64 {
    2.0
}

fn default_c2() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmRegime {
    /// `p_in * (n / k) * q`.
    pub within_transmissibility: f64,
    /// `p_ac * n^2 * q`.
    pub across_mass: f64,
    pub within_percolates: bool,
    pub across_vanishes: bool,
    pub warnings: Vec<String>,
}

impl SbmParams {
    pub fn new(n: usize, k: usize, p_in: f64, p_ac: f64, q: f64) -> Self {
        SbmParams {
            n,
            k,
            p_in,
            p_ac,
            q,
            seeding: SbmSeeding::Count,
            periods: None,
            c1: default_c1(),
            c2: default_c2(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n {
            return Err(invalid(format!("block count {} must be in 1..={}", self.k, self.n)));
        }
        for (name, v) in [("p_in", self.p_in), ("p_ac", self.p_ac), ("q", self.q)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name}={v} not in [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        block_sizes(self.n, self.k)
    }

    pub fn periods(&self) -> usize {
        self.periods.unwrap_or(self.n)
    }

    pub fn seed_rule(&self) -> SeedRule {
        match self.seeding {
            SbmSeeding::Count => SeedRule::Count {
                count: self.k.div_ceil(2),
            },
            SbmSeeding::Bernoulli => SeedRule::Bernoulli {
                prob: self.k as f64 / (2.0 * self.n as f64),
            },
        }
    }

    pub fn regime(&self) -> SbmRegime {
        let b = self.n as f64 / self.k as f64;
        let within = self.p_in * b * self.q;
        let across = self.p_ac * (self.n as f64).powi(2) * self.q;
        let within_percolates = within >= self.c1 * b.ln();
        let across_vanishes = across <= self.c2;
        let mut warnings = Vec::new();
        if !within_percolates {
            warnings.push(format!(
                "within-block transmissibility {within:.4} below {} * ln(n/k) = {:.4}",
                self.c1,
                self.c1 * b.ln()
            ));
        }
        if !across_vanishes {
            warnings.push(format!("across-block mass {across:.4} above {}", self.c2));
        }
        SbmRegime {
            within_transmissibility: within,
            across_mass: across,
            within_percolates,
            across_vanishes,
            warnings,
        }
    }
}

/// `k` block sizes summing to `n` that differ by at most one.
pub fn block_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|b| n / k + usize::from(b < n % k)).collect()
}

/// Samples the SBM graph, then runs SIR on it.
pub fn gen_sbm_diffusion(params: &SbmParams, seed: u64) -> Result<(GraphTopology, DiffusionOutcome)> {
    params.validate()?;
    let mut rng = rng_from_seed(seed);
    let edges = sbm_edges(&mut rng, &params.block_sizes(), params.p_in, params.p_ac);
    let g = GraphTopology::from_edges(params.n, edges.into_iter().map(|(u, v)| (u as usize, v as usize)))?;
    let sir_seed = rng.random::<u64>();
    let out = gen_sir(&g, &params.seed_rule(), params.q, params.periods(), sir_seed)?;
    Ok((g, out))
}

/// Infected indicators with the same law as [`gen_sbm_diffusion`], sampled
/// through the open-edge graph: an undirected pair is open with probability
/// `p * q`, and infection is reachability within `periods` open hops.
pub(crate) fn sbm_outcome_direct(params: &SbmParams, sizes: &[usize], seed: u64, spread: &mut Spread) -> Vec<bool> {
    let mut rng = rng_from_seed(seed);
    let edges = sbm_edges(&mut rng, sizes, params.p_in * params.q, params.p_ac * params.q);
    let g = GraphTopology::from_edges(params.n, edges.into_iter().map(|(u, v)| (u as usize, v as usize)))
        .expect("sbm edges are in range and loop-free");
    let seeds = params.seed_rule().draw(params.n, &mut rng);
    let mut infected = vec![false; params.n];
    for &i in spread.run(&g, &seeds, 1.0, params.periods(), 0) {
        infected[i] = true;
    }
    infected
}
