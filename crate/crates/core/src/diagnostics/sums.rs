//! Monte Carlo estimators of the within-set, across-set and outside-set
//! weighted covariance sums.
//!
//! Each replication is reduced to a handful of scalars using the set sums
//! `T_a = sum_{b in A_a} Z_b`:
//!
//! * triple sum `sum_a |Z_a| T_a^2`,
//! * pair sum `y = sum_a Z_a T_a`,
//! * grand total `sum_a Z_a`,
//! * square sum `sum_a Z_a^2`.
//!
//! All estimators are reductions over these records in replication order, so
//! results do not depend on the thread count.

use crate::affinity::AffinityMap;
use crate::array::{check_batch, SampleArray};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, rng_from_seed, stream, SimRng};
use crate::stats::Moments;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Default triple budget per replication.
pub const DEFAULT_S1: u64 = 10_000_000;
/// Default pair budget per replication.
pub const DEFAULT_S2: u64 = 1_000_000;
/// Minimum replications per occupied bin for the binned sign estimator.
pub const MIN_PER_BIN: usize = 50;
/// Largest `N^2 R` the binned estimator will attempt.
pub const BINNED_MAX_WORK: f64 = 2e10;

/// How the within-set sums are evaluated in each replication.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    /// Exhaustive unless computing the set sums exceeds the budget.
    #[default]
    Auto,
    Exhaustive,
    /// Always subsample `S1` triples and `S2` pairs.
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SumOptions {
    pub s1: u64,
    pub s2: u64,
    pub evaluation: Evaluation,
    /// Seed for subsampling; replication `r` uses `derive_seed(seed, SUBSAMPLE, r)`.
    pub seed: u64,
}

impl Default for SumOptions {
    fn default() -> Self {
        SumOptions {
            s1: DEFAULT_S1,
            s2: DEFAULT_S2,
            evaluation: Evaluation::Auto,
            seed: 0,
        }
    }
}

impl SumOptions {
    pub fn validate(&self) -> Result<()> {
        if self.s1 == 0 || self.s2 == 0 {
            return Err(invalid("subsampling budgets must be at least 1"));
        }
        Ok(())
    }

    fn sampled(&self, aff: &AffinityMap) -> (bool, bool) {
        match self.evaluation {
            Evaluation::Exhaustive => (false, false),
            Evaluation::Sampled => (true, true),
            Evaluation::Auto => {
                let cost = aff.set_sum_cost();
                (cost > self.s1, cost > self.s2)
            }
        }
    }
}

/// An estimate with its Monte Carlo standard errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SumEstimate {
    pub estimate: f64,
    /// Total standard error.
    pub se: f64,
    /// Across-replication part.
    pub se_replication: f64,
    /// Within-replication subsampling part; zero when exhaustive.
    pub se_subsample: f64,
    pub subsampled: bool,
}

impl SumEstimate {
    pub fn exact(value: f64) -> Self {
        SumEstimate {
            estimate: value,
            se: 0.0,
            se_replication: 0.0,
            se_subsample: 0.0,
            subsampled: false,
        }
    }

    fn new(estimate: f64, se_rep: f64, se_sub: f64, subsampled: bool) -> Self {
        SumEstimate {
            estimate,
            se: se_rep.hypot(se_sub),
            se_replication: se_rep,
            se_subsample: se_sub,
            subsampled,
        }
    }

    /// `se / |estimate|`, infinite for a zero estimate with positive SE.
    pub fn rel_se(&self) -> f64 {
        if self.se == 0.0 {
            0.0
        } else {
            self.se / self.estimate.abs()
        }
    }
}

/// Per-replication reduction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Record {
    /// Triple sum, or its subsampled estimate.
    pub triple: f64,
    /// Variance of the subsampled triple estimate; zero when exhaustive.
    pub triple_var: f64,
    /// Pair sum `y`, or its subsampled estimate.
    pub pair: f64,
    pub pair_var: f64,
    /// Estimated variance of `pair_var`.
    pub pair_var_var: f64,
    /// Exhaustive pair sum when it was computed (needed by the positive-mode
    /// outside sum).
    pub pair_exact: Option<f64>,
    pub total: f64,
    pub squares: f64,
    /// `omega[d][d']` contribution `sum_{a: dim a = d} Z_a T_a^{(d')}`, row-major.
    pub omega: Vec<f64>,
}

struct Sampler {
    /// Cumulative `|A_a|^2`.
    cum_sq: Vec<f64>,
    /// Cumulative `|A_a|`.
    cum_len: Vec<f64>,
}

impl Sampler {
    fn new(aff: &AffinityMap) -> Self {
        let mut cum_sq = Vec::with_capacity(aff.len());
        let mut cum_len = Vec::with_capacity(aff.len());
        let (mut s2, mut s1) = (0.0, 0.0);
        for a in 0..aff.len() {
            let l = aff.set_len(a) as f64;
            s2 += l * l;
            s1 += l;
            cum_sq.push(s2);
            cum_len.push(s1);
        }
        Sampler { cum_sq, cum_len }
    }

    fn draw(cum: &[f64], rng: &mut SimRng) -> usize {
        let u = rng.random::<f64>() * cum[cum.len() - 1];
        cum.partition_point(|&c| c <= u).min(cum.len() - 1)
    }
}

/// Which optional parts of a [`Record`] to compute.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Needs {
    /// The pilot `Omega` contribution.
    pub omega: bool,
    /// The exhaustive pair sum even when pairs are subsampled.
    pub exact_pairs: bool,
}

/// Reduces one replication.
pub fn record(arr: &SampleArray, aff: &AffinityMap, opts: &SumOptions, index: u64, needs: Needs) -> Record {
    let z = arr.values();
    let p = arr.p();
    let (sample_triples, sample_pairs) = opts.sampled(aff);
    let mut rec = Record {
        total: z.iter().sum(),
        squares: z.iter().map(|v| v * v).sum(),
        ..Record::default()
    };
    let need_sets = !(sample_triples && sample_pairs) || needs.omega || needs.exact_pairs;
    if need_sets {
        let mut t = vec![0.0; z.len()];
        aff.set_sums(z, &mut t);
        if !sample_triples {
            rec.triple = z.iter().zip(&t).map(|(a, b)| a.abs() * b * b).sum();
        }
        let y: f64 = z.iter().zip(&t).map(|(a, b)| a * b).sum();
        rec.pair_exact = Some(y);
        if !sample_pairs {
            rec.pair = y;
        }
        if needs.omega {
            rec.omega = vec![0.0; p * p];
            if p == 1 {
                rec.omega[0] = y;
            } else {
                let mut td = vec![0.0; z.len() * p];
                aff.set_sums_by_dim(z, &mut td);
                for (a, &za) in z.iter().enumerate() {
                    let d = a % p;
                    for d2 in 0..p {
                        rec.omega[d * p + d2] += za * td[a * p + d2];
                    }
                }
            }
        }
    }
    if sample_triples || sample_pairs {
        let sampler = Sampler::new(aff);
        let mut rng = rng_from_seed(derive_seed(opts.seed, stream::SUBSAMPLE, index));
        if sample_triples {
            let w = sampler.cum_sq[sampler.cum_sq.len() - 1];
            let mut m = Moments::default();
            for _ in 0..opts.s1 {
                let a = Sampler::draw(&sampler.cum_sq, &mut rng);
                let l = aff.set_len(a);
                let b = aff.member_at(a, rng.random_range(0..l));
                let c = aff.member_at(a, rng.random_range(0..l));
                m.push(z[a].abs() * z[b] * z[c]);
            }
            rec.triple = w * m.mean;
            rec.triple_var = w * w * m.variance() / opts.s1 as f64;
        }
        if sample_pairs {
            let w = sampler.cum_len[sampler.cum_len.len() - 1];
            let mut m = Moments::default();
            let mut fourth = 0.0;
            let mut vals = Vec::with_capacity(opts.s2 as usize);
            for _ in 0..opts.s2 {
                let a = Sampler::draw(&sampler.cum_len, &mut rng);
                let c = aff.member_at(a, rng.random_range(0..aff.set_len(a)));
                let v = z[a] * z[c];
                m.push(v);
                vals.push(v);
            }
            for v in &vals {
                fourth += (v - m.mean).powi(4);
            }
            let s = opts.s2 as f64;
            let var = m.variance();
            rec.pair = w * m.mean;
            rec.pair_var = w * w * var / s;
            if opts.s2 > 3 {
                let m4 = fourth / s;
                let var_of_var = ((m4 - var * var * (s - 3.0) / (s - 1.0)) / s).max(0.0);
                rec.pair_var_var = (w * w / s).powi(2) * var_of_var;
            }
        }
    }
    rec
}

/// Reduces every replication, in order.
pub fn records(reps: &[SampleArray], aff: &AffinityMap, opts: &SumOptions, needs: Needs) -> Result<Vec<Record>> {
    let (n, p) = check_batch(reps, 1)?;
    check_map(aff, n, p)?;
    opts.validate()?;
    Ok(reps
        .par_iter()
        .enumerate()
        .map(|(r, arr)| record(arr, aff, opts, r as u64, needs))
        .collect())
}

pub(crate) fn check_map(aff: &AffinityMap, n: usize, p: usize) -> Result<()> {
    if aff.n() != n || aff.p() != p {
        return Err(Error::ShapeMismatch(format!(
            "affinity map is over ({}, {}) but replications are ({n}, {p})",
            aff.n(),
            aff.p()
        )));
    }
    Ok(())
}

fn moments(xs: impl Iterator<Item = f64>) -> Moments {
    let mut m = Moments::default();
    xs.for_each(|x| m.push(x));
    m
}

/// Within-set triple sum from records.
pub fn a1_from_records(recs: &[Record]) -> SumEstimate {
    let r = recs.len() as f64;
    let m = moments(recs.iter().map(|x| x.triple));
    let subsampled = recs.iter().any(|x| x.triple_var > 0.0);
    let sub: f64 = recs.iter().map(|x| x.triple_var).sum();
    SumEstimate::new(m.mean, m.se(), sub.sqrt() / r, subsampled)
}

/// Across-set sum `Var(y)` from records, summing ordered pairs.
pub fn a2_from_records(recs: &[Record]) -> Result<SumEstimate> {
    if recs.len() < 2 {
        return Err(Error::InsufficientReplications {
            needed: 2,
            got: recs.len(),
        });
    }
    let r = recs.len() as f64;
    let m = moments(recs.iter().map(|x| x.pair));
    let s2 = m.variance();
    let se_rep = variance_se(recs.iter().map(|x| x.pair), m.mean, s2, r);
    let subsampled = recs.iter().any(|x| x.pair_var > 0.0);
    if !subsampled {
        return Ok(SumEstimate::new(s2, se_rep, 0.0, false));
    }
    let mean_v = recs.iter().map(|x| x.pair_var).sum::<f64>() / r;
    let cross: f64 = recs.iter().map(|x| (x.pair - m.mean).powi(2) * x.pair_var).sum();
    let sq: f64 = recs.iter().map(|x| x.pair_var * x.pair_var).sum();
    let vv: f64 = recs.iter().map(|x| x.pair_var_var).sum();
    let se_sub = ((4.0 * cross + 2.0 * sq) / (r - 1.0).powi(2) + vv / (r * r)).sqrt();
    Ok(SumEstimate::new(s2 - mean_v, se_rep, se_sub, true))
}

/// Standard error of an unbiased sample variance from the fourth central moment.
fn variance_se(xs: impl Iterator<Item = f64>, mean: f64, s2: f64, r: f64) -> f64 {
    if r < 4.0 {
        return 0.0;
    }
    let m4 = xs.map(|x| (x - mean).powi(4)).sum::<f64>() / r;
    ((m4 - s2 * s2 * (r - 3.0) / (r - 1.0)) / r).max(0.0).sqrt()
}

/// Outside-set sum under sign `+1`: `E[(sum Z)^2 - y]`.
pub fn a3_positive_from_records(recs: &[Record]) -> Result<SumEstimate> {
    if recs.iter().any(|x| x.pair_exact.is_none()) {
        return Err(invalid("outside-set sums need exhaustive pair sums"));
    }
    let m = moments(recs.iter().map(|x| x.total * x.total - x.pair_exact.unwrap_or(0.0)));
    Ok(SumEstimate::new(m.mean, m.se(), 0.0, false))
}

/// Triple sum `sum E[|Z_a| Z_b Z_c]` over `b, c in A_a`.
pub fn a1_sum(reps: &[SampleArray], aff: &AffinityMap, opts: &SumOptions) -> Result<SumEstimate> {
    Ok(a1_from_records(&records(reps, aff, opts, Needs::default())?))
}

/// Ordered-pair sum `sum cov(Z_a Z_c, Z_b Z_d)` over `c in A_a`, `d in A_b`.
pub fn a2_sum(reps: &[SampleArray], aff: &AffinityMap, opts: &SumOptions) -> Result<SumEstimate> {
    check_batch(reps, 2)?;
    a2_from_records(&records(reps, aff, opts, Needs::default())?)
}

/// Conditional-sign estimator for the outside-set sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SignMode {
    /// Sign taken as `+1`; valid for positively associated arrays.
    Positive,
    /// Sign estimated per quantile bin of `Z_b`.
    Binned { bins: usize },
}

/// Outside-set sum `sum E[Z_a Z_b sign(E[Z_a Z_b | Z_b])]` over `b not in A_a`.
pub fn a3_sum(reps: &[SampleArray], aff: &AffinityMap, mode: SignMode) -> Result<SumEstimate> {
    let (n, p) = check_batch(reps, 2)?;
    check_map(aff, n, p)?;
    match mode {
        SignMode::Positive => {
            let opts = SumOptions {
                evaluation: Evaluation::Exhaustive,
                ..SumOptions::default()
            };
            a3_positive_from_records(&records(reps, aff, &opts, Needs::default())?)
        }
        SignMode::Binned { bins } => a3_binned(reps, aff, bins),
    }
}

/// Quantile bin of each replication for one coordinate: edges are the order
/// statistics at `floor(k R / B)`, ties fall in the upper bin.
fn bin_labels(col: &[f64], bins: usize) -> (Vec<u8>, Vec<usize>) {
    let r = col.len();
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..bins).map(|k| sorted[k * r / bins]).collect();
    let mut counts = vec![0usize; bins];
    let labels = col
        .iter()
        .map(|&x| {
            let k = edges.partition_point(|&e| e <= x);
            counts[k] += 1;
            k as u8
        })
        .collect();
    (labels, counts)
}

/// Binned conditional-sign estimator. Refuses when an occupied bin holds
/// fewer than [`MIN_PER_BIN`] replications.
pub fn a3_binned(reps: &[SampleArray], aff: &AffinityMap, bins: usize) -> Result<SumEstimate> {
    let (n, p) = check_batch(reps, 2)?;
    check_map(aff, n, p)?;
    if !(2..=64).contains(&bins) {
        return Err(invalid("bin count must be in 2..=64"));
    }
    let len = n * p;
    let r = reps.len();
    let work = (len as f64).powi(2) * r as f64;
    if work > BINNED_MAX_WORK {
        return Err(invalid(format!(
            "binned sign estimation needs about {work:e} operations, above the limit {BINNED_MAX_WORK:e}; use the positive mode"
        )));
    }
    // Column-major copy: cols[a * r + rep].
    let mut cols = vec![0.0; len * r];
    for (k, arr) in reps.iter().enumerate() {
        for (a, &v) in arr.values().iter().enumerate() {
            cols[a * r + k] = v;
        }
    }
    let labels: Vec<(Vec<u8>, Vec<usize>)> = (0..len)
        .into_par_iter()
        .map(|b| bin_labels(&cols[b * r..(b + 1) * r], bins))
        .collect();
    if let Some(&c) = labels
        .iter()
        .flat_map(|(_, c)| c.iter())
        .find(|&&c| c > 0 && c < MIN_PER_BIN)
    {
        return Err(Error::InsufficientReplications {
            needed: MIN_PER_BIN,
            got: c,
        });
    }
    const CHUNK: usize = 16;
    let partials: Vec<Vec<f64>> = (0..len)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut w = vec![0.0; r];
            let mut bin_sum = vec![0.0; bins];
            for &b in chunk {
                let zb = &cols[b * r..(b + 1) * r];
                let lab = &labels[b].0;
                for a in 0..len {
                    if aff.contains(a, b) {
                        continue;
                    }
                    let za = &cols[a * r..(a + 1) * r];
                    bin_sum.iter_mut().for_each(|s| *s = 0.0);
                    for k in 0..r {
                        bin_sum[lab[k] as usize] += za[k] * zb[k];
                    }
                    for k in 0..r {
                        let s = if bin_sum[lab[k] as usize] < 0.0 { -1.0 } else { 1.0 };
                        w[k] += s * za[k] * zb[k];
                    }
                }
            }
            w
        })
        .collect();
    let mut w = vec![0.0; r];
    for part in &partials {
        for (acc, v) in w.iter_mut().zip(part) {
            *acc += v;
        }
    }
    let m = moments(w.into_iter());
    Ok(SumEstimate::new(m.mean, m.se(), 0.0, false))
}

/// The two reduced sums for singleton sets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorollarySums {
    /// `sum_{i,j} cov(Z_i^2, Z_j^2)`.
    pub squares_cov: SumEstimate,
    /// `sum_{i != j} cov(Z_i, Z_j)`.
    pub cross_cov: SumEstimate,
}

pub fn corollary_from_records(recs: &[Record]) -> Result<CorollarySums> {
    if recs.len() < 2 {
        return Err(Error::InsufficientReplications {
            needed: 2,
            got: recs.len(),
        });
    }
    let r = recs.len() as f64;
    let q = moments(recs.iter().map(|x| x.squares));
    let s2 = q.variance();
    let se = variance_se(recs.iter().map(|x| x.squares), q.mean, s2, r);
    let c = moments(recs.iter().map(|x| x.total * x.total - x.squares));
    Ok(CorollarySums {
        squares_cov: SumEstimate::new(s2, se, 0.0, false),
        cross_cov: SumEstimate::new(c.mean, c.se(), 0.0, false),
    })
}

/// Reduced sums computed directly from the replications, without sets.
pub fn corollary_sums(reps: &[SampleArray]) -> Result<CorollarySums> {
    check_batch(reps, 2)?;
    let recs: Vec<Record> = reps
        .par_iter()
        .map(|arr| {
            let z = arr.values();
            Record {
                total: z.iter().sum(),
                squares: z.iter().map(|v| v * v).sum(),
                ..Record::default()
            }
        })
        .collect();
    corollary_from_records(&recs)
}

/// Pilot `Omega` from records: `omega[d][d'] = mean sum_{a: dim a = d} Z_a T_a^{(d')}`.
pub fn omega_from_records(recs: &[Record], p: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut omega = vec![vec![0.0; p]; p];
    let mut se = vec![vec![0.0; p]; p];
    for d in 0..p {
        for d2 in 0..p {
            let m = moments(recs.iter().map(|x| x.omega[d * p + d2]));
            omega[d][d2] = m.mean;
            se[d][d2] = m.se();
        }
    }
    (omega, se)
}
