//! Distance of whitened sums from the standard normal.

use crate::affinity::{AffinityMap, RecipeRecord};
use crate::array::ModelId;
use crate::diagnostics::{omega_from_records, record, Evaluation, Needs, SumOptions};
use crate::error::{invalid, Error, Result};
use crate::models::Generator;
use crate::omega::{omega_from_kernel, OmegaMatrix, Whitener, DEFAULT_TOL};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::stats::{norm_cdf, norm_quantile};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Family-wise level of the KS gates.
pub const DEFAULT_ALPHA: f64 = 0.01;
/// Random projection count.
pub const DEFAULT_PROJECTIONS: usize = 20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaChoice {
    /// Analytic kernel when the model has one, pilot otherwise.
    #[default]
    Auto,
    Analytic,
    Pilot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaUsed {
    Analytic,
    Pilot,
}

fn check_series(x: &[f64], min: usize) -> Result<()> {
    if x.len() < min {
        return Err(Error::InsufficientReplications {
            needed: min,
            got: x.len(),
        });
    }
    if let Some(k) = x.iter().position(|v| !v.is_finite()) {
        return Err(invalid(format!("sample {k} is not finite")));
    }
    Ok(())
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// `sup |F_R - Phi|` over the sample points, both sides of each step.
pub fn ks_distance(samples: &[f64]) -> Result<f64> {
    check_series(samples, 10)?;
    let s = sorted(samples);
    let r = s.len() as f64;
    Ok(s.iter().enumerate().fold(0.0, |d: f64, (k, &x)| {
        let f = norm_cdf(x);
        d.max((k + 1) as f64 / r - f).max(f - k as f64 / r)
    }))
}

/// Quantile-coupling estimate `mean |x_(k) - Phi^-1((k - 1/2) / R)|`.
pub fn w1_distance(samples: &[f64]) -> Result<f64> {
    check_series(samples, 10)?;
    let s = sorted(samples);
    let r = s.len() as f64;
    Ok(s.iter()
        .enumerate()
        .map(|(k, &x)| (x - norm_quantile((k as f64 + 0.5) / r)).abs())
        .sum::<f64>()
        / r)
}

/// KS critical value at level `alpha` split over `tests` tests, from the
/// asymptotic tail `2 exp(-2 c^2)`.
pub fn ks_critical(r: usize, alpha: f64, tests: usize) -> f64 {
    (((2.0 * tests as f64) / alpha).ln() / 2.0).sqrt() / (r as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteinCheck {
    pub d_k: f64,
    pub d_w: f64,
    /// `(2/pi)^(1/4) d_W^(1/2)`.
    pub bound: f64,
    /// KS sampling band `1.36 / sqrt(R)`.
    pub band: f64,
    /// `d_K - bound` when it exceeds the band.
    pub violation: Option<f64>,
}

pub fn stein_bound_check(samples: &[f64]) -> Result<SteinCheck> {
    check_series(samples, 100)?;
    let d_k = ks_distance(samples)?;
    let d_w = w1_distance(samples)?;
    let bound = (2.0 / std::f64::consts::PI).powf(0.25) * d_w.sqrt();
    let band = 1.36 / (samples.len() as f64).sqrt();
    let excess = d_k - bound;
    Ok(SteinCheck {
        d_k,
        d_w,
        bound,
        band,
        violation: (excess > band).then_some(excess),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub direction: Vec<f64>,
    pub ks: f64,
    pub w1: f64,
}

/// Directions: `j` uniform random unit vectors (sign fixed so the first
/// nonzero coordinate is positive), the canonical basis and `1_p / sqrt(p)`.
/// Duplicates are dropped.
pub fn projection_directions(p: usize, j: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(derive_seed(seed, stream::PROJECTIONS, 0));
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(j + p + 1);
    for _ in 0..j {
        let mut c: Vec<f64> = loop {
            let c: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break c.into_iter().map(|v| v / norm).collect();
            }
        };
        if c.iter().find(|v| **v != 0.0).is_some_and(|v| *v < 0.0) {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        if p == 1 {
            c[0] = 1.0;
        }
        dirs.push(c);
    }
    for d in 0..p {
        let mut e = vec![0.0; p];
        e[d] = 1.0;
        dirs.push(e);
    }
    dirs.push(vec![1.0 / (p as f64).sqrt(); p]);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(dirs.len());
    for c in dirs {
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

/// KS and W1 of `rows . c` for every direction.
pub fn cramer_wold_projections(rows: &[Vec<f64>], j: usize, seed: u64) -> Result<Vec<Projection>> {
    if j == 0 {
        return Err(invalid("projection count must be at least 1"));
    }
    let p = rows.first().map_or(0, Vec::len);
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(Error::ShapeMismatch(
            "rows must be non-empty with a common length".into(),
        ));
    }
    projection_directions(p, j, seed)
        .into_iter()
        .map(|c| {
            let x: Vec<f64> = rows
                .iter()
                .map(|r| r.iter().zip(&c).map(|(a, b)| a * b).sum())
                .collect();
            Ok(Projection {
                ks: ks_distance(&x)?,
                w1: w1_distance(&x)?,
                direction: c,
            })
        })
        .collect()
}

/// `Omega` for a built generator: analytic kernel or a pilot run on the
/// pilot stream.
pub fn omega_for(
    g: &dyn Generator,
    aff: &AffinityMap,
    choice: OmegaChoice,
    pilot_reps: usize,
    seed: u64,
) -> Result<(OmegaMatrix, OmegaUsed)> {
    let kernel = match choice {
        OmegaChoice::Pilot => None,
        OmegaChoice::Analytic => Some(
            g.kernel()
                .ok_or_else(|| invalid("this model has no analytic covariance kernel"))?,
        ),
        OmegaChoice::Auto => g.kernel(),
    };
    if let Some(k) = kernel {
        return Ok((omega_from_kernel(&k, aff)?, OmegaUsed::Analytic));
    }
    if pilot_reps < 2 {
        return Err(Error::InsufficientReplications {
            needed: 2,
            got: pilot_reps,
        });
    }
    let opts = SumOptions {
        evaluation: Evaluation::Exhaustive,
        ..SumOptions::default()
    };
    let needs = Needs {
        omega: true,
        exact_pairs: false,
    };
    let recs: Vec<_> = (0..pilot_reps)
        .into_par_iter()
        .map(|k| {
            let arr = g.generate(derive_seed(seed, stream::PILOT_OMEGA, k as u64));
            record(&arr, aff, &opts, k as u64, needs)
        })
        .collect();
    let (w, se) = omega_from_records(&recs, g.p());
    Ok((OmegaMatrix::new(w, se, g.n())?, OmegaUsed::Pilot))
}

/// `R x p` rows `Omega^{-1/2} S` from replications on the evaluation stream.
pub fn whitened_rows(g: &dyn Generator, whitener: &Whitener, reps: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..reps)
        .into_par_iter()
        .map(|k| {
            let arr = g.generate(derive_seed(seed, stream::EVALUATION, k as u64));
            whitener.whiten(&arr.sum_vector())
        })
        .collect()
}

/// Whitened sums with `Omega` from the analytic kernel or a disjoint pilot run.
pub fn whitened_sums(
    g: &dyn Generator,
    aff: &AffinityMap,
    choice: OmegaChoice,
    reps: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let (omega, _) = omega_for(g, aff, choice, reps, seed)?;
    let w = omega.whitener(DEFAULT_TOL)?;
    Ok(whitened_rows(g, &w, reps, seed))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalityOptions {
    pub replications: usize,
    pub projections: usize,
    pub alpha: f64,
    pub omega: OmegaChoice,
    /// Defaults to `replications`.
    pub pilot_replications: Option<usize>,
    pub tol: f64,
}

impl Default for NormalityOptions {
    fn default() -> Self {
        NormalityOptions {
            replications: 2000,
            projections: DEFAULT_PROJECTIONS,
            alpha: DEFAULT_ALPHA,
            omega: OmegaChoice::Auto,
            pilot_replications: None,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub dimension: usize,
    pub ks: f64,
    pub w1: f64,
    pub mean: f64,
    pub variance: f64,
    pub stein: SteinCheck,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    #[serde(flatten)]
    pub projection: Projection,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub tool_version: String,
    pub config_hash: Option<String>,
    pub model_id: ModelId,
    pub recipe: RecipeRecord,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub replications: usize,
    pub omega: OmegaMatrix,
    pub omega_source: OmegaUsed,
    pub omega_min_eigenvalue: f64,
    pub alpha: f64,
    pub tests: usize,
    /// KS gate shared by every marginal and projection.
    pub critical_value: f64,
    pub marginals: Vec<Marginal>,
    pub projections: Vec<ProjectionResult>,
    /// `|C - I|_F` for the sample covariance `C` of the rows.
    pub covariance_deviation: f64,
    pub pass: bool,
    pub warnings: Vec<String>,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let r = x.len() as f64;
    let m = x.iter().sum::<f64>() / r;
    let v = if x.len() > 1 {
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (r - 1.0)
    } else {
        0.0
    };
    (m, v)
}

/// Gate results for a set of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct RowEvaluation {
    pub marginals: Vec<Marginal>,
    pub projections: Vec<ProjectionResult>,
    pub critical_value: f64,
    pub tests: usize,
    pub covariance_deviation: f64,
}

/// Evaluates the rows against `N(0, I)`.
pub fn evaluate_rows(rows: &[Vec<f64>], opts: &NormalityOptions, seed: u64) -> Result<RowEvaluation> {
    let r = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    // Basis directions repeat the marginal tests and are not counted twice.
    let projections: Vec<Projection> = cramer_wold_projections(rows, opts.projections, seed)?
        .into_iter()
        .filter(|pr| pr.direction.iter().filter(|&&v| v != 0.0).count() > 1)
        .collect();
    let tests = projections.len() + p;
    let crit = ks_critical(r, opts.alpha, tests);
    let marginals = (0..p)
        .map(|d| {
            let col: Vec<f64> = rows.iter().map(|row| row[d]).collect();
            let (mean, variance) = mean_var(&col);
            let ks = ks_distance(&col)?;
            Ok(Marginal {
                dimension: d,
                ks,
                w1: w1_distance(&col)?,
                mean,
                variance,
                stein: stein_bound_check(&col)?,
                pass: ks < crit,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let projections = projections
        .into_iter()
        .map(|pr| ProjectionResult {
            pass: pr.ks < crit,
            projection: pr,
        })
        .collect();
    let mut dev = 0.0;
    let means: Vec<f64> = (0..p)
        .map(|d| rows.iter().map(|x| x[d]).sum::<f64>() / r as f64)
        .collect();
    for d in 0..p {
        for e in 0..p {
            let c = rows.iter().map(|x| (x[d] - means[d]) * (x[e] - means[e])).sum::<f64>() / (r as f64 - 1.0);
            dev += (c - if d == e { 1.0 } else { 0.0 }).powi(2);
        }
    }
    Ok(RowEvaluation {
        marginals,
        projections,
        critical_value: crit,
        tests,
        covariance_deviation: dev.sqrt(),
    })
}

/// Full normality run for one generator and affinity map.
pub fn run_normality(
    g: &dyn Generator,
    aff: &AffinityMap,
    opts: &NormalityOptions,
    seed: u64,
) -> Result<(NormalityReport, Vec<Vec<f64>>)> {
    if opts.replications < 100 {
        return Err(Error::InsufficientReplications {
            needed: 100,
            got: opts.replications,
        });
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(invalid("alpha must be in (0, 1)"));
    }
    let pilot = opts.pilot_replications.unwrap_or(opts.replications);
    let (omega, source) = omega_for(g, aff, opts.omega, pilot, seed)?;
    let whitener = omega.whitener(opts.tol)?;
    let rows = whitened_rows(g, &whitener, opts.replications, seed);
    let RowEvaluation {
        marginals,
        projections,
        critical_value,
        tests,
        covariance_deviation,
    } = evaluate_rows(&rows, opts, seed)?;
    let pass = marginals.iter().all(|m| m.pass) && projections.iter().all(|p| p.pass);
    let mut warnings = g.warnings();
    warnings.extend(aff.record().warnings.iter().cloned());
    for m in &marginals {
        if let Some(v) = m.stein.violation {
            warnings.push(format!(
                "dimension {}: d_K exceeds the Wasserstein bound by {v:.4}, beyond the sampling band",
                m.dimension
            ));
        }
    }
    let report = NormalityReport {
        tool_version: crate::VERSION.into(),
        config_hash: None,
        model_id: g.model_id(),
        recipe: aff.record().clone(),
        n: g.n(),
        p: g.p(),
        seed,
        replications: opts.replications,
        omega_min_eigenvalue: whitener.min_eigenvalue,
        omega,
        omega_source: source,
        alpha: opts.alpha,
        tests,
        critical_value,
        marginals,
        projections,
        covariance_deviation,
        pass,
        warnings,
    };
    Ok((report, rows))
}

impl NormalityReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// QQ data: `series, sorted sample, normal quantile` per marginal.
pub fn write_qq_csv<W: Write>(rows: &[Vec<f64>], config_hash: Option<&str>, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["config_hash", "tool_version", "series", "sample", "normal_quantile"])?;
    let p = rows.first().map_or(0, Vec::len);
    let r = rows.len() as f64;
    for d in 0..p {
        let col: Vec<f64> = rows.iter().map(|x| x[d]).collect();
        for (k, x) in sorted(&col).into_iter().enumerate() {
            out.write_record([
                config_hash.unwrap_or("").to_string(),
                crate::VERSION.to_string(),
                format!("dim{d}"),
                format!("{x:?}"),
                format!("{:?}", norm_quantile((k as f64 + 0.5) / r)),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perfect(r: usize) -> Vec<f64> {
        (0..r).map(|k| norm_quantile((k as f64 + 0.5) / r as f64)).collect()
    }

    #[test]
    fn ks_examples() {
        let d = ks_distance(&perfect(100)).unwrap();
        assert!((d - 0.005).abs() < 1e-9);
        assert!((ks_distance(&vec![0.0; 50]).unwrap() - 0.5).abs() < 1e-15);
        let shifted: Vec<f64> = perfect(100).iter().map(|x| x + 10.0).collect();
        assert!(ks_distance(&shifted).unwrap() > 0.99);
        assert!(ks_distance(&[0.0; 9]).is_err());
        assert!(ks_distance(&[f64::NAN; 12]).is_err());
    }

    #[test]
    fn w1_examples() {
        assert!(w1_distance(&perfect(200)).unwrap() < 1e-12);
        let shifted: Vec<f64> = perfect(200).iter().map(|x| x - 0.3).collect();
        assert!((w1_distance(&shifted).unwrap() - 0.3).abs() < 1e-12);
        let d = w1_distance(&vec![0.0; 100_000]).unwrap();
        assert!((d - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-4);
    }

    #[test]
    fn stein_examples() {
        let s = stein_bound_check(&vec![0.0; 100_000]).unwrap();
        assert!((s.d_k - 0.5).abs() < 1e-12);
        assert!((s.bound - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-4);
        assert!(s.violation.is_none());
        let s = stein_bound_check(&perfect(1000)).unwrap();
        assert!(s.violation.is_none());
    }

    #[test]
    fn scalar_rows_run_a_single_test() {
        let rows: Vec<Vec<f64>> = perfect(500).into_iter().map(|x| vec![x]).collect();
        let ev = evaluate_rows(&rows, &NormalityOptions::default(), 1).unwrap();
        assert_eq!(ev.tests, 1);
        assert!(ev.projections.is_empty());
        assert!((ev.critical_value - ks_critical(500, 0.01, 1)).abs() < 1e-15);
    }

    #[test]
    fn critical_value_matches_single_test_gate() {
        assert!((ks_critical(1, 0.01, 1) - 1.63).abs() < 0.005);
        assert!(ks_critical(2000, 0.01, 23) > ks_critical(2000, 0.01, 1));
    }

    #[test]
    fn projection_directions_are_unit_and_include_basis() {
        let dirs = projection_directions(3, 5, 7);
        assert_eq!(dirs.len(), 9);
        for c in &dirs {
            assert!((c.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(dirs.contains(&vec![0.0, 1.0, 0.0]));
        assert_eq!(projection_directions(1, 20, 7), vec![vec![1.0]]);
    }

    #[test]
    fn degenerate_coordinate_shows_in_its_projection() {
        let rows: Vec<Vec<f64>> = perfect(400).into_iter().map(|x| vec![x, 0.0]).collect();
        let pr = cramer_wold_projections(&rows, 4, 1).unwrap();
        let e2 = pr.iter().find(|p| p.direction == vec![0.0, 1.0]).unwrap();
        assert!((e2.ks - 0.5).abs() < 1e-12);
    }
}
