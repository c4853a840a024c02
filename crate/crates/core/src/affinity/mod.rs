//! Affinity-set recipes.
//!
//! Each constructor records the tuning it used (`epsilon`, `K`, radius,
//! `D_n`, `beta_n`) in the map's [`RecipeRecord`].

mod map;
mod spec;

pub use map::{AffinityMap, Members, RecipeId, RecipeRecord};
pub use spec::{model_decay, AffinitySpec, EpsilonSpec};

use crate::error::{invalid, Error, Result};
use crate::models::diffusion::infection_counts;
use crate::models::{GraphTopology, Locations, MaternParams, Metric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// `sets[(i, d)] = {(i, d)}`.
pub fn singleton(n: usize, p: usize) -> AffinityMap {
    AffinityMap::singleton_map(n, p)
}

/// `{j : |j - i| <= m}`, truncated at the ends (scalar series).
pub fn m_ball(n: usize, m: usize) -> AffinityMap {
    let rec = RecipeRecord::new(RecipeId::MBall).with("m", m as f64);
    AffinityMap::window_map(n, m).with_record(rec)
}

/// Covariance bound as a function of distance, used to turn a threshold
/// `epsilon` into a ball radius `K(epsilon)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecayBound {
    /// `scale * h^-exponent`, so `K = (scale / epsilon)^(1 / exponent)`.
    PowerLaw { scale: f64, exponent: f64 },
    /// `amplitude * (1 + h / spacing)^-exponent`.
    Shifted {
        amplitude: f64,
        spacing: f64,
        exponent: f64,
    },
    /// The Matérn covariance itself, inverted numerically.
    Matern { sigma2: f64, phi: f64, nu: f64 },
}

impl DecayBound {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DecayBound::PowerLaw { scale, exponent } => scale > 0.0 && exponent > 0.0,
            DecayBound::Shifted {
                amplitude,
                spacing,
                exponent,
            } => amplitude > 0.0 && spacing > 0.0 && exponent > 0.0,
            DecayBound::Matern { sigma2, phi, nu } => sigma2 > 0.0 && phi > 0.0 && nu > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("decay parameters must be positive: {self:?}")))
        }
    }

    pub fn bound(&self, h: f64) -> f64 {
        match *self {
            DecayBound::PowerLaw { scale, exponent } => scale * h.powf(-exponent),
            DecayBound::Shifted {
                amplitude,
                spacing,
                exponent,
            } => amplitude * (1.0 + h / spacing).powf(-exponent),
            DecayBound::Matern { sigma2, phi, nu } => MaternParams { sigma2, phi, nu }.cov(h),
        }
    }

    /// Distance at which the bound equals `epsilon`; zero when the bound is
    /// already below `epsilon` at distance zero.
    pub fn radius(&self, eps: f64) -> f64 {
        match *self {
            DecayBound::PowerLaw { scale, exponent } => (scale / eps).powf(1.0 / exponent),
            DecayBound::Shifted {
                amplitude,
                spacing,
                exponent,
            } => (spacing * ((amplitude / eps).powf(1.0 / exponent) - 1.0)).max(0.0),
            DecayBound::Matern { sigma2, .. } => {
                if eps >= sigma2 {
                    return 0.0;
                }
                let mut hi = 1.0;
                while self.bound(hi) > eps {
                    hi *= 2.0;
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.bound(mid) > eps {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
        }
    }
}

/// `epsilon_n = 1 / (rho0^d n^gamma)`.
pub fn epsilon_schedule(n: usize, rho0: f64, dim: usize, gamma: f64) -> f64 {
    1.0 / (rho0.powi(dim as i32) * (n as f64).powf(gamma))
}

/// Metric balls of radius `K(epsilon)` (uniform across points).
pub fn distance_ball(locs: &Locations, eps: f64, decay: DecayBound, metric: Metric) -> Result<AffinityMap> {
    if !(eps > 0.0) {
        return Err(invalid("epsilon must be positive"));
    }
    decay.validate()?;
    let k = decay.radius(eps);
    let n = locs.len();
    let sets = balls(locs, k, metric);
    let mut map = AffinityMap::from_sets(n, 1, sets)?;
    let min_sep = locs.min_separation(metric).map(|t| t.2).unwrap_or(f64::INFINITY);
    let packing = if min_sep.is_finite() {
        (1.0 + 2.0 * k / min_sep).powi(locs.dim() as i32)
    } else {
        1.0
    };
    let max = map.max_set_size();
    let mut rec = RecipeRecord::new(RecipeId::DistanceBall)
        .with("epsilon", eps)
        .with("K", k)
        .with("min_separation", min_sep)
        .with("packing_bound", packing)
        .with("packing_ratio", packing / n as f64)
        .with("max_set_size", max as f64);
    if n > 1 && max == n {
        rec.warnings.push(format!(
            "radius {k:.4} covers the full index set; affinity sets are not o(n)"
        ));
    }
    map = map.with_record(rec);
    Ok(map)
}

fn balls(locs: &Locations, radius: f64, metric: Metric) -> Vec<Vec<usize>> {
    let order = locs.sweep_order();
    let mut pos = vec![0; locs.len()];
    for (k, &i) in order.iter().enumerate() {
        pos[i] = k;
    }
    (0..locs.len())
        .into_par_iter()
        .map(|i| locs.ball(i, radius, metric, &order, &pos))
        .collect()
}

/// Closed `r`-hop neighborhoods.
pub fn graph_neighborhood(graph: &GraphTopology, r: usize) -> Result<AffinityMap> {
    if r == 0 {
        return Err(invalid("graph neighborhood radius must be at least 1"));
    }
    let sets: Vec<Vec<usize>> = (0..graph.n()).into_par_iter().map(|i| graph.ball(i, r)).collect();
    let map = AffinityMap::from_sets(graph.n(), 1, sets)?;
    let d = map.max_set_size();
    let rec = RecipeRecord::new(RecipeId::GraphNeighborhood)
        .with("r", r as f64)
        .with("D_n", d as f64);
    Ok(map.with_record(rec))
}

/// Minimum replications so that the standard error of a probability at
/// `eps` is below `eps / 3`.
pub fn infection_ball_min_reps(eps: f64) -> usize {
    (9.0 * (1.0 - eps) / eps).ceil().max(1.0) as usize
}

/// `A_i = B_i ∪ {i}` with `B_j = {i : Pr(X_i = 1 | j only seed) > eps}`.
pub fn infection_ball(
    graph: &GraphTopology,
    q: f64,
    periods: usize,
    eps: f64,
    reps: usize,
    seed: u64,
) -> Result<AffinityMap> {
    if !(eps > 0.0) {
        return Err(invalid("epsilon must be positive"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid(format!("q={q} not in [0, 1]")));
    }
    let need = infection_ball_min_reps(eps);
    if reps < need {
        return Err(Error::InsufficientPrecision {
            detail: format!(
                "{reps} replications give standard error {:.4} at threshold {eps}, above {:.4}",
                (eps * (1.0 - eps) / reps.max(1) as f64).sqrt(),
                eps / 3.0
            ),
            required: need,
        });
    }
    let n = graph.n();
    let r = reps as f64;
    let balls: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let counts = infection_counts(graph, q, periods, j, reps, seed);
            counts
                .iter()
                .enumerate()
                .filter(|&(_, &c)| c as f64 / r > eps)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    let beta = balls.iter().map(Vec::len).max().unwrap_or(0) as f64 / n as f64;
    let mean_size = balls.iter().map(Vec::len).sum::<usize>() as f64 / n as f64;
    let sets = balls
        .into_iter()
        .enumerate()
        .map(|(i, mut b)| {
            if b.binary_search(&i).is_err() {
                b.push(i);
            }
            b
        })
        .collect();
    let map = AffinityMap::from_sets(n, 1, sets)?;
    let rec = RecipeRecord::new(RecipeId::InfectionBall)
        .with("epsilon", eps)
        .with("q", q)
        .with("periods", periods as f64)
        .with("replications", reps as f64)
        .with("beta_n", beta)
        .with("mean_ball_size", mean_size)
        .with("D_n", map.max_set_size() as f64);
    Ok(map.with_record(rec))
}

/// Each node's set is its block; `labels[i]` is node `i`'s block. All
/// coordinates of nodes in a block are included when `p > 1`.
pub fn block_set(labels: &[usize], p: usize) -> Result<AffinityMap> {
    if p == 0 {
        return Err(invalid("p must be at least 1"));
    }
    let n = labels.len();
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut blocks: Vec<Vec<u32>> = vec![Vec::new(); ids.len()];
    let mut flat_label = vec![0u32; n * p];
    for (i, l) in labels.iter().enumerate() {
        let b = ids.binary_search(l).unwrap();
        for d in 0..p {
            blocks[b].push((i * p + d) as u32);
            flat_label[i * p + d] = b as u32;
        }
    }
    let sizes: Vec<usize> = blocks.iter().map(|b| b.len() / p).collect();
    let rec = RecipeRecord::new(RecipeId::BlockSet)
        .with("blocks", ids.len() as f64)
        .with("max_block", *sizes.iter().max().unwrap_or(&0) as f64)
        .with("min_block", *sizes.iter().min().unwrap_or(&0) as f64);
    Ok(AffinityMap::partition_map(n, p, flat_label, blocks).with_record(rec))
}

/// Block sets from an explicit list of blocks; rejects overlaps and gaps.
pub fn block_set_from_blocks(n: usize, blocks: &[Vec<usize>]) -> Result<AffinityMap> {
    let mut labels = vec![usize::MAX; n];
    for (b, block) in blocks.iter().enumerate() {
        for &i in block {
            if i >= n {
                return Err(invalid(format!("block member {i} out of range")));
            }
            if labels[i] != usize::MAX {
                return Err(invalid(format!("node {i} appears in more than one block")));
            }
            labels[i] = b;
        }
    }
    if let Some(i) = labels.iter().position(|&l| l == usize::MAX) {
        return Err(invalid(format!("node {i} is in no block")));
    }
    block_set(&labels, 1)
}

/// Union of the distance ball at threshold `eps / 2` and the units whose
/// group affinity is at least `1 - eps / 2`.
pub fn hybrid_set(
    locs: &Locations,
    eps: f64,
    decay: DecayBound,
    metric: Metric,
    groups: &[usize],
    affinity: &[Vec<f64>],
) -> Result<AffinityMap> {
    check_group_matrix(affinity)?;
    let n = locs.len();
    if groups.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} group labels for {n} units",
            groups.len()
        )));
    }
    if let Some(&g) = groups.iter().find(|&&g| g >= affinity.len()) {
        return Err(invalid(format!("group {g} has no row in the affinity matrix")));
    }
    if !(eps > 0.0) {
        return Err(invalid("epsilon must be positive"));
    }
    decay.validate()?;
    let k = decay.radius(eps / 2.0);
    let spatial = balls(locs, k, metric);
    let cut = 1.0 - eps / 2.0;
    let mut by_group: Vec<Vec<usize>> = vec![Vec::new(); affinity.len()];
    for (i, &g) in groups.iter().enumerate() {
        by_group[g].push(i);
    }
    let sets: Vec<Vec<usize>> = spatial
        .into_par_iter()
        .enumerate()
        .map(|(i, mut s)| {
            let gi = groups[i];
            for (h, members) in by_group.iter().enumerate() {
                if affinity[gi][h] >= cut {
                    s.extend_from_slice(members);
                }
            }
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect();
    let map = AffinityMap::from_sets(n, 1, sets)?;
    let max = map.max_set_size();
    let mut rec = RecipeRecord::new(RecipeId::HybridSet)
        .with("epsilon", eps)
        .with("K", k)
        .with("group_cut", cut)
        .with("max_set_size", max as f64);
    if n > 1 && max == n {
        rec.warnings.push("some affinity set is the full index set".into());
    }
    Ok(map.with_record(rec))
}

/// Square, symmetric, entries in `[0, 1]`, unit diagonal.
pub fn check_group_matrix(p: &[Vec<f64>]) -> Result<()> {
    let g = p.len();
    for (a, row) in p.iter().enumerate() {
        if row.len() != g {
            return Err(Error::ShapeMismatch("group affinity matrix must be square".into()));
        }
        if (row[a] - 1.0).abs() > 1e-12 {
            return Err(invalid(format!(
                "group affinity diagonal entry {a} is {}, not 1",
                row[a]
            )));
        }
        for (b, &v) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("group affinity ({a}, {b}) = {v} not in [0, 1]")));
            }
            if (v - p[b][a]).abs() > 1e-12 {
                return Err(invalid(format!("group affinity matrix not symmetric at ({a}, {b})")));
            }
        }
    }
    Ok(())
}
