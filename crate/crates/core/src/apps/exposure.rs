//! Exposure mappings and the Horvitz-Thompson contrast under interference.

use crate::error::{invalid, Error, Result};
use crate::models::{sir_with_seeds, GraphTopology};
use crate::rng::{derive_seed, keyed_uniform, mix64, rng_from_seed, stream};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Largest `n` for exact enumeration of exposure probabilities.
pub const MAX_ENUMERATION_N: usize = 20;
/// Required `se / pi` before a Monte Carlo probability is used.
pub const MAX_REL_SE: f64 = 0.02;

/// Four-level labels: `1` treated alone, `2` treated with a treated
/// neighbor, `3` control with a treated neighbor, `4` neither.
pub fn exposure_map(graph: &GraphTopology, t: &[bool]) -> Result<Vec<i64>> {
    if t.len() != graph.n() {
        return Err(Error::ShapeMismatch(format!(
            "assignment has length {} but the graph has {} nodes",
            t.len(),
            graph.n()
        )));
    }
    Ok((0..graph.n())
        .map(|i| {
            let exposed = graph.neighbors(i).iter().any(|&j| t[j as usize]);
            match (t[i], exposed) {
                (true, false) => 1,
                (true, true) => 2,
                (false, true) => 3,
                (false, false) => 4,
            }
        })
        .collect())
}

/// A real-valued exposure to be binned.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RealExposure {
    /// Share of treated neighbors; zero for isolated nodes.
    TreatedFraction,
    /// Share of `runs` coupled SIR runs, seeded at the treated nodes, that
    /// reach the node. The run keys are fixed, so raising any `T_j` never
    /// lowers any exposure.
    CoupledDiffusion {
        q: f64,
        periods: usize,
        runs: usize,
        key: u64,
    },
}

impl RealExposure {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RealExposure::TreatedFraction => Ok(()),
            RealExposure::CoupledDiffusion { q, runs, .. } => {
                if !(0.0..=1.0).contains(&q) || runs == 0 {
                    Err(invalid("coupled diffusion exposure needs q in [0, 1] and runs >= 1"))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn values(&self, graph: &GraphTopology, t: &[bool]) -> Vec<f64> {
        let n = graph.n();
        match *self {
            RealExposure::TreatedFraction => (0..n)
                .map(|i| {
                    let nb = graph.neighbors(i);
                    if nb.is_empty() {
                        0.0
                    } else {
                        nb.iter().filter(|&&j| t[j as usize]).count() as f64 / nb.len() as f64
                    }
                })
                .collect(),
            RealExposure::CoupledDiffusion { q, periods, runs, key } => {
                let seeds: Vec<usize> = (0..n).filter(|&i| t[i]).collect();
                let mut hits = vec![0u32; n];
                for r in 0..runs {
                    let out = sir_with_seeds(graph, &seeds, q, periods, mix64(key ^ mix64(r as u64)));
                    for (h, &inf) in hits.iter_mut().zip(&out.infected) {
                        *h += u32::from(inf);
                    }
                }
                hits.into_iter().map(|h| f64::from(h) / runs as f64).collect()
            }
        }
    }
}

/// Half-open bins `[origin + k delta, origin + (k + 1) delta)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub delta: f64,
    pub origin: f64,
    pub labels: Vec<i64>,
    pub occupancy: BTreeMap<i64, usize>,
    /// `max_i (e_i - lower edge of its bin)`, always below `delta`.
    pub approximation_gap: f64,
}

pub fn bin_exposure(values: &[f64], delta: f64, origin: f64) -> Result<Binning> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(invalid("bin width must be positive"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("exposures must be finite"));
    }
    let mut occupancy = BTreeMap::new();
    let mut gap: f64 = 0.0;
    let labels = values
        .iter()
        .map(|&e| {
            let k = ((e - origin) / delta).floor() as i64;
            *occupancy.entry(k).or_insert(0) += 1;
            gap = gap.max(e - (origin + k as f64 * delta));
            k
        })
        .collect();
    Ok(Binning {
        delta,
        origin,
        labels,
        occupancy,
        approximation_gap: gap,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExposureKind {
    FourLevel,
    Binned { real: RealExposure, delta: f64 },
}

/// Graph, iid Bernoulli treatment law and exposure function.
#[derive(Clone, Debug)]
pub struct ExposureDesign {
    pub graph: GraphTopology,
    pub treat_prob: f64,
    pub kind: ExposureKind,
}

impl ExposureDesign {
    pub fn new(graph: GraphTopology, treat_prob: f64, kind: ExposureKind) -> Result<Self> {
        if !(treat_prob > 0.0 && treat_prob < 1.0) {
            return Err(invalid("treatment probability must be in (0, 1)"));
        }
        if let ExposureKind::Binned { real, delta } = kind {
            real.validate()?;
            if !(delta > 0.0) {
                return Err(invalid("bin width must be positive"));
            }
        }
        Ok(ExposureDesign {
            graph,
            treat_prob,
            kind,
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn labels(&self, t: &[bool]) -> Result<Vec<i64>> {
        match self.kind {
            ExposureKind::FourLevel => exposure_map(&self.graph, t),
            ExposureKind::Binned { real, delta } => {
                if t.len() != self.n() {
                    return Err(Error::ShapeMismatch("assignment length differs from n".into()));
                }
                Ok(bin_exposure(&real.values(&self.graph, t), delta, 0.0)?.labels)
            }
        }
    }
}

fn assignment_from_bits(bits: u64, n: usize) -> Vec<bool> {
    (0..n).map(|i| bits >> i & 1 == 1).collect()
}

/// Probability of assignment `bits` under iid Bernoulli(`pt`).
fn assignment_weight(bits: u64, n: usize, pt: f64) -> f64 {
    let k = bits.count_ones() as i32;
    pt.powi(k) * (1.0 - pt).powi(n as i32 - k)
}

/// `pi_i(label)` with standard errors (zero when exact).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureProbs {
    pub prob: BTreeMap<i64, Vec<f64>>,
    pub se: BTreeMap<i64, Vec<f64>>,
    pub exact: bool,
    pub replications: Option<usize>,
}

impl ExposureProbs {
    pub fn get(&self, label: i64, i: usize) -> f64 {
        self.prob.get(&label).map_or(0.0, |v| v[i])
    }

    pub fn se(&self, label: i64, i: usize) -> f64 {
        self.se.get(&label).map_or(0.0, |v| v[i])
    }
}

fn add_labels(acc: &mut BTreeMap<i64, Vec<f64>>, labels: &[i64], w: f64, n: usize) {
    for (i, &l) in labels.iter().enumerate() {
        acc.entry(l).or_insert_with(|| vec![0.0; n])[i] += w;
    }
}

fn merge_maps(mut a: BTreeMap<i64, Vec<f64>>, b: BTreeMap<i64, Vec<f64>>) -> BTreeMap<i64, Vec<f64>> {
    for (k, v) in b {
        let e = a.entry(k).or_insert_with(|| vec![0.0; v.len()]);
        for (x, y) in e.iter_mut().zip(v) {
            *x += y;
        }
    }
    a
}

/// Exact enumeration of all `2^n` assignments (`n <= 20`).
pub fn exposure_probabilities_exact(design: &ExposureDesign) -> Result<ExposureProbs> {
    let n = design.n();
    if n > MAX_ENUMERATION_N {
        return Err(invalid(format!(
            "exact enumeration is limited to n <= {MAX_ENUMERATION_N}"
        )));
    }
    const CHUNK: u64 = 1 << 10;
    let total = 1u64 << n;
    let parts: Vec<BTreeMap<i64, Vec<f64>>> = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = BTreeMap::new();
            for bits in c * CHUNK..((c + 1) * CHUNK).min(total) {
                let t = assignment_from_bits(bits, n);
                let labels = design.labels(&t).expect("assignment has length n");
                add_labels(&mut acc, &labels, assignment_weight(bits, n, design.treat_prob), n);
            }
            acc
        })
        .collect();
    let prob = parts.into_iter().fold(BTreeMap::new(), merge_maps);
    let se = prob.iter().map(|(&k, v)| (k, vec![0.0; v.len()])).collect();
    Ok(ExposureProbs {
        prob,
        se,
        exact: true,
        replications: None,
    })
}

/// Monte Carlo over `reps` assignments with binomial standard errors.
pub fn exposure_probabilities_mc(design: &ExposureDesign, reps: usize, seed: u64) -> Result<ExposureProbs> {
    if reps < 2 {
        return Err(Error::InsufficientReplications { needed: 2, got: reps });
    }
    let n = design.n();
    const CHUNK: usize = 256;
    let parts: Vec<BTreeMap<i64, Vec<f64>>> = (0..reps.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = BTreeMap::new();
            for r in c * CHUNK..((c + 1) * CHUNK).min(reps) {
                let mut rng = rng_from_seed(derive_seed(seed, stream::ESTIMATION, r as u64));
                let t: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < design.treat_prob).collect();
                let labels = design.labels(&t).expect("assignment has length n");
                add_labels(&mut acc, &labels, 1.0, n);
            }
            acc
        })
        .collect();
    let counts = parts.into_iter().fold(BTreeMap::new(), merge_maps);
    let rf = reps as f64;
    let prob: BTreeMap<i64, Vec<f64>> = counts
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().map(|c| c / rf).collect()))
        .collect();
    let se = prob
        .iter()
        .map(|(&k, v)| (k, v.iter().map(|p| (p * (1.0 - p) / rf).sqrt()).collect()))
        .collect();
    Ok(ExposureProbs {
        prob,
        se,
        exact: false,
        replications: Some(reps),
    })
}

/// Exact for `n <= 20`, Monte Carlo otherwise.
pub fn exposure_probabilities(design: &ExposureDesign, reps: usize, seed: u64) -> Result<ExposureProbs> {
    if design.n() <= MAX_ENUMERATION_N {
        exposure_probabilities_exact(design)
    } else {
        exposure_probabilities_mc(design, reps, seed)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivityMode {
    /// Estimate over units with positive probabilities and list exclusions.
    #[default]
    Flag,
    Strict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HtEstimate {
    pub estimand: String,
    pub value: f64,
    pub included: usize,
    pub excluded: Vec<usize>,
    pub flagged: bool,
}

/// `(1/n) sum 1{D_i = k} y_i / pi_i(k) - (1/n) sum 1{D_i = l} y_i / pi_i(l)`.
///
/// Units with `pi_i(k) = 0` or `pi_i(l) = 0` are dropped in flag mode and the
/// average runs over the remaining units; strict mode refuses. Monte Carlo
/// probabilities must have `se < 0.02 pi` on every included unit.
pub fn ht_estimate(
    labels: &[i64],
    y: &[f64],
    probs: &ExposureProbs,
    dk: i64,
    dl: i64,
    mode: PositivityMode,
) -> Result<HtEstimate> {
    let n = labels.len();
    if y.len() != n {
        return Err(Error::ShapeMismatch("outcomes and labels differ in length".into()));
    }
    let excluded: Vec<usize> = (0..n)
        .filter(|&i| !(probs.get(dk, i) > 0.0 && probs.get(dl, i) > 0.0))
        .collect();
    if !excluded.is_empty() && mode == PositivityMode::Strict {
        return Err(Error::Positivity {
            count: excluded.len(),
            first: excluded[0],
        });
    }
    if !probs.exact {
        for i in (0..n).filter(|i| excluded.binary_search(i).is_err()) {
            for d in [dk, dl] {
                let (p, se) = (probs.get(d, i), probs.se(d, i));
                if se >= MAX_REL_SE * p {
                    return Err(Error::InsufficientPrecision {
                        detail: format!("pi_{i}({d}) = {p:.4} has standard error {se:.2e}"),
                        required: probs
                            .replications
                            .map_or(0, |r| (r as f64 * (se / (MAX_REL_SE * p)).powi(2)).ceil() as usize),
                    });
                }
            }
        }
    }
    let included = n - excluded.len();
    let mut s = 0.0;
    for i in 0..n {
        if excluded.binary_search(&i).is_ok() {
            continue;
        }
        if labels[i] == dk {
            s += y[i] / probs.get(dk, i);
        } else if labels[i] == dl {
            s -= y[i] / probs.get(dl, i);
        }
    }
    Ok(HtEstimate {
        estimand: format!("tau(d{dk}, d{dl})"),
        value: if included == 0 { 0.0 } else { s / included as f64 },
        included,
        flagged: !excluded.is_empty(),
        excluded,
    })
}

/// Potential outcomes `y_i(d)` per label.
pub type OutcomeTable = BTreeMap<i64, Vec<f64>>;

/// `(1/n) sum_i (y_i(k) - y_i(l))`.
pub fn true_effect(table: &OutcomeTable, dk: i64, dl: i64) -> Result<f64> {
    let (a, b) = (
        table
            .get(&dk)
            .ok_or_else(|| invalid(format!("no outcomes for label {dk}")))?,
        table
            .get(&dl)
            .ok_or_else(|| invalid(format!("no outcomes for label {dl}")))?,
    );
    Ok(a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64)
}

/// `E[tau_hat]` over all `2^n` assignments, with observed outcomes read from
/// the potential-outcome table.
pub fn ht_design_expectation(design: &ExposureDesign, table: &OutcomeTable, dk: i64, dl: i64) -> Result<f64> {
    let n = design.n();
    let probs = exposure_probabilities_exact(design)?;
    let mut e = 0.0;
    for bits in 0..1u64 << n {
        let t = assignment_from_bits(bits, n);
        let labels = design.labels(&t)?;
        let y: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| table.get(l).map_or(0.0, |v| v[i]))
            .collect();
        let est = ht_estimate(&labels, &y, &probs, dk, dl, PositivityMode::Strict)?;
        e += assignment_weight(bits, n, design.treat_prob) * est.value;
    }
    Ok(e)
}

/// Uniform draw keyed by `(key, i)`, exposed for coupled assignment draws.
pub fn keyed_assignment(n: usize, prob: f64, key: u64) -> Vec<bool> {
    (0..n).map(|i| keyed_uniform(key, i as u64) < prob).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_level_examples() {
        let g = GraphTopology::path(4);
        assert_eq!(exposure_map(&g, &[false; 4]).unwrap(), vec![4; 4]);
        let iso = GraphTopology::empty(3);
        assert_eq!(exposure_map(&iso, &[true, false, false]).unwrap(), vec![1, 4, 4]);
        let edge = GraphTopology::path(2);
        assert_eq!(exposure_map(&edge, &[true, true]).unwrap(), vec![2, 2]);
        assert_eq!(
            exposure_map(&g, &[true, false, false, false]).unwrap(),
            vec![1, 3, 4, 4]
        );
    }

    #[test]
    fn binning_is_half_open() {
        let b = bin_exposure(&[0.0, 0.25, 0.2499999, 0.5, 1.0], 0.25, 0.0).unwrap();
        assert_eq!(b.labels, vec![0, 1, 0, 2, 4]);
        assert!(b.approximation_gap < 0.25);
        assert_eq!(b.occupancy[&0], 2);
    }

    #[test]
    fn ht_examples() {
        let n = 5;
        let labels = vec![1, 1, 4, 1, 4];
        let mut prob = BTreeMap::new();
        prob.insert(1, vec![1.0; n]);
        prob.insert(2, vec![0.5; n]);
        let probs = ExposureProbs {
            se: prob
                .iter()
                .map(|(&k, v): (&i64, &Vec<f64>)| (k, vec![0.0; v.len()]))
                .collect(),
            prob,
            exact: true,
            replications: None,
        };
        let est = ht_estimate(&labels, &[1.0; 5], &probs, 1, 2, PositivityMode::Flag).unwrap();
        assert!((est.value - 3.0 / 5.0).abs() < 1e-15);
        let none = ht_estimate(&[4; 5], &[1.0; 5], &probs, 1, 2, PositivityMode::Flag).unwrap();
        assert_eq!(none.value, 0.0);
    }

    #[test]
    fn positivity_modes() {
        let design = ExposureDesign::new(GraphTopology::empty(3), 0.5, ExposureKind::FourLevel).unwrap();
        let probs = exposure_probabilities_exact(&design).unwrap();
        // Isolated nodes never reach label 2.
        let labels = design.labels(&[true, false, true]).unwrap();
        assert!(ht_estimate(&labels, &[1.0; 3], &probs, 1, 2, PositivityMode::Strict).is_err());
        let est = ht_estimate(&labels, &[1.0; 3], &probs, 1, 2, PositivityMode::Flag).unwrap();
        assert!(est.flagged && est.excluded == vec![0, 1, 2] && est.value == 0.0);
    }

    #[test]
    fn exact_probabilities_sum_to_one() {
        let design = ExposureDesign::new(GraphTopology::path(4), 0.3, ExposureKind::FourLevel).unwrap();
        let probs = exposure_probabilities_exact(&design).unwrap();
        for i in 0..4 {
            let s: f64 = (1..=4).map(|l| probs.get(l, i)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // End node: treated alone = 0.3 * 0.7.
        assert!((probs.get(1, 0) - 0.21).abs() < 1e-12);
    }

    #[test]
    fn coupled_diffusion_exposure_is_monotone() {
        let g = GraphTopology::erdos_renyi(40, 0.08, 3).unwrap();
        let real = RealExposure::CoupledDiffusion {
            q: 0.4,
            periods: 5,
            runs: 30,
            key: 11,
        };
        let t = keyed_assignment(40, 0.2, 5);
        let base = real.values(&g, &t);
        for j in (0..40).filter(|&j| !t[j]) {
            let mut up = t.clone();
            up[j] = true;
            let e = real.values(&g, &up);
            assert!(e.iter().zip(&base).all(|(a, b)| a >= b));
        }
    }
}
