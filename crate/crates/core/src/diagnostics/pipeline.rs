//! Grid runner: sums, `|Omega|_F`, ratios and verdicts across `n`.

use super::sums::{
    a1_from_records, a2_from_records, a3_binned, a3_positive_from_records, check_map, corollary_from_records,
    omega_from_records, record, CorollarySums, Needs, SumEstimate, SumOptions, BINNED_MAX_WORK,
};
use super::verdict::{scaling_verdict, RatioPoint, SlopeVerdict, Verdict, DEFAULT_TAU, MIN_GRID};
use crate::affinity::{AffinityMap, RecipeId, RecipeRecord};
use crate::array::{ModelId, SampleArray};
use crate::error::{invalid, Result};
use crate::models::Generator;
use crate::omega::{omega_from_kernel, OmegaMatrix};
use crate::rng::{derive_seed, stream};
use crate::stats::weighted_line_fit;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;

/// Replications kept in memory for the binned sign estimator, in values.
pub const MAX_STORED_VALUES: usize = 20_000_000;
/// Bin counts reported for sign-estimator sensitivity.
pub const SENSITIVITY_BINS: [usize; 3] = [4, 8, 16];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum A3Mode {
    /// Analytic or positive-sign sum for positively associated models, binned
    /// sign estimation otherwise.
    #[default]
    Auto,
    Positive,
    Binned,
}

/// Where the outside-set sum came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum A3Source {
    /// Exact `sum cov` over outside pairs from the model kernel.
    Analytic,
    /// Monte Carlo `E[(sum Z)^2 - y]`.
    Positive,
    Binned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaSource {
    Analytic,
    Pilot,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticsOptions {
    pub replications: usize,
    pub sums: SumOptions,
    pub a3_mode: A3Mode,
    pub bins: usize,
    pub tau: f64,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        DiagnosticsOptions {
            replications: 1000,
            sums: SumOptions::default(),
            a3_mode: A3Mode::Auto,
            bins: 8,
            tau: DEFAULT_TAU,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub rel_se: f64,
}

impl Ratio {
    /// `sum / F^power` with first-order relative error.
    fn new(sum: &SumEstimate, frob: f64, frob_rel_se: f64, power: f64) -> Self {
        let value = if sum.estimate == 0.0 {
            0.0
        } else {
            sum.estimate / frob.powf(power)
        };
        Ratio {
            value,
            rel_se: sum.rel_se().hypot(power * frob_rel_se),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSensitivity {
    pub bins: usize,
    /// Absent when some bin held too few replications.
    pub a3: Option<SumEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: usize,
    pub replications: usize,
    pub max_set_size: usize,
    pub mean_set_size: f64,
    pub recipe: RecipeRecord,
    pub a1: SumEstimate,
    pub a2: SumEstimate,
    pub a3: SumEstimate,
    pub a3_source: A3Source,
    /// Monte Carlo positive-sign value alongside an analytic `a3`.
    pub a3_monte_carlo: Option<SumEstimate>,
    pub a3_sensitivity: Vec<BinSensitivity>,
    pub omega: OmegaMatrix,
    pub omega_source: OmegaSource,
    pub omega_frob: f64,
    pub omega_frob_rel_se: f64,
    pub r1: Ratio,
    pub r2: Ratio,
    pub r3: Ratio,
    /// Reduced sums, for singleton sets only.
    pub corollary: Option<CorollarySums>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionVerdict {
    pub assumption: u8,
    pub ratio: String,
    #[serde(flatten)]
    pub fit: SlopeVerdict,
}

/// Fitted `d log |Omega|_F / d log n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub exponent: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub tool_version: String,
    pub config_hash: Option<String>,
    pub model_id: ModelId,
    pub recipe_id: RecipeId,
    pub seed: u64,
    pub tau: f64,
    pub n_grid: Vec<usize>,
    pub points: Vec<GridPoint>,
    pub verdicts: Vec<AssumptionVerdict>,
    pub omega_growth: Option<GrowthFit>,
    pub overall: Verdict,
}

/// Checks `>= 5` strictly increasing points with near-constant ratios.
pub fn check_grid(ns: &[usize]) -> Result<()> {
    if ns.len() < MIN_GRID {
        return Err(invalid(format!("n grid needs at least {MIN_GRID} points")));
    }
    if ns.windows(2).any(|w| w[1] <= w[0]) || ns[0] == 0 {
        return Err(invalid("n grid must be positive and strictly increasing"));
    }
    let steps: Vec<f64> = ns.windows(2).map(|w| (w[1] as f64 / w[0] as f64).ln()).collect();
    let lo = steps.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = steps.iter().copied().fold(0.0, f64::max);
    if hi > 1.25 * lo + 0.01 {
        return Err(invalid("n grid must be geometrically spaced"));
    }
    Ok(())
}

/// `k` points from `lo` to `hi`, geometrically spaced and rounded.
pub fn geometric_grid(lo: usize, hi: usize, k: usize) -> Vec<usize> {
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    (0..k)
        .map(|i| {
            let t = if k == 1 { 0.0 } else { i as f64 / (k - 1) as f64 };
            (a + t * (b - a)).exp().round() as usize
        })
        .collect()
}

fn a3_source(mode: A3Mode, has_kernel: bool, positive: bool) -> A3Source {
    match (mode, has_kernel, positive) {
        (A3Mode::Binned, ..) => A3Source::Binned,
        (_, true, true) | (A3Mode::Positive, true, _) => A3Source::Analytic,
        (A3Mode::Positive, false, _) | (A3Mode::Auto, false, true) => A3Source::Positive,
        (A3Mode::Auto, _, false) => A3Source::Binned,
    }
}

/// Refuses binned sign estimation beyond the storage and work limits.
fn check_budget(n: usize, p: usize, r: usize, source: A3Source) -> Result<()> {
    if source != A3Source::Binned {
        return Ok(());
    }
    if n * p * r > MAX_STORED_VALUES {
        return Err(invalid(format!(
            "binned sign estimation at n={n} would store {} values, above the limit {MAX_STORED_VALUES}",
            n * p * r
        )));
    }
    let work = ((n * p) as f64).powi(2) * r as f64;
    if work > BINNED_MAX_WORK {
        return Err(invalid(format!(
            "binned sign estimation at n={n} needs about {work:e} operations, above the limit {BINNED_MAX_WORK:e}; use the positive mode"
        )));
    }
    Ok(())
}

fn analyze_point(g: &dyn Generator, aff: &AffinityMap, opts: &DiagnosticsOptions, seed: u64) -> Result<GridPoint> {
    let n = g.n();
    let p = g.p();
    check_map(aff, n, p)?;
    let r = opts.replications;
    if r < 2 {
        return Err(invalid("diagnostics need at least 2 replications"));
    }
    let base = derive_seed(seed, stream::DIAGNOSTICS, n as u64);
    let sums = SumOptions {
        seed: base,
        ..opts.sums
    };
    sums.validate()?;
    let kernel = g.kernel();
    let source = a3_source(opts.a3_mode, kernel.is_some(), g.positively_associated());
    check_budget(n, p, r, source)?;
    let store = source == A3Source::Binned;
    let needs = Needs {
        omega: kernel.is_none(),
        exact_pairs: source != A3Source::Binned,
    };
    let rep_seed = |k: usize| derive_seed(base, stream::EVALUATION, k as u64);
    let (recs, stored): (Vec<_>, Vec<Option<SampleArray>>) = (0..r)
        .into_par_iter()
        .map(|k| {
            let arr = g.generate(rep_seed(k));
            let rec = record(&arr, aff, &sums, k as u64, needs);
            (rec, store.then_some(arr))
        })
        .unzip();
    let a1 = a1_from_records(&recs);
    let a2 = a2_from_records(&recs)?;
    let a3_mc = if needs.exact_pairs {
        Some(a3_positive_from_records(&recs)?)
    } else {
        None
    };
    let mut sensitivity = Vec::new();
    let (a3, a3_monte_carlo) = match source {
        A3Source::Analytic => {
            let k = kernel.as_ref().expect("analytic source implies a kernel");
            (SumEstimate::exact(k.outside_sum(aff)?), a3_mc)
        }
        A3Source::Positive => (a3_mc.expect("positive source keeps exact pairs"), None),
        A3Source::Binned => {
            let reps: Vec<SampleArray> = stored.into_iter().flatten().collect();
            let main = a3_binned(&reps, aff, opts.bins)?;
            for &b in &SENSITIVITY_BINS {
                sensitivity.push(BinSensitivity {
                    bins: b,
                    a3: if b == opts.bins {
                        Some(main)
                    } else {
                        a3_binned(&reps, aff, b).ok()
                    },
                });
            }
            (main, None)
        }
    };
    let (omega, omega_source) = match &kernel {
        Some(k) => (omega_from_kernel(k, aff)?, OmegaSource::Analytic),
        None => {
            let (w, se) = omega_from_records(&recs, p);
            (OmegaMatrix::new(w, se, n)?, OmegaSource::Pilot)
        }
    };
    let frob = omega.frobenius;
    let frob_rel = omega.frobenius_rel_se();
    let corollary = if aff.record().recipe_id == RecipeId::Singleton {
        Some(corollary_from_records(&recs)?)
    } else {
        None
    };
    let mut warnings = g.warnings();
    warnings.extend(aff.record().warnings.iter().cloned());
    if a3.estimate < 0.0 {
        warnings.push("outside-set sum estimate is negative".into());
    }
    Ok(GridPoint {
        n,
        replications: r,
        max_set_size: aff.max_set_size(),
        mean_set_size: aff.total_members() as f64 / aff.len() as f64,
        recipe: aff.record().clone(),
        r1: Ratio::new(&a1, frob, frob_rel, 1.5),
        r2: Ratio::new(&a2, frob, frob_rel, 2.0),
        r3: Ratio::new(&a3, frob, frob_rel, 1.0),
        a1,
        a2,
        a3,
        a3_source: source,
        a3_monte_carlo,
        a3_sensitivity: sensitivity,
        omega,
        omega_source,
        omega_frob: frob,
        omega_frob_rel_se: frob_rel,
        corollary,
        warnings,
    })
}

/// A generator and its affinity map at one grid size.
pub type GridInstance = (Arc<dyn Generator>, AffinityMap);

/// Runs every grid point and renders the verdicts.
pub fn run_diagnostics(
    ns: &[usize],
    build: impl Fn(usize) -> Result<GridInstance>,
    opts: &DiagnosticsOptions,
    seed: u64,
) -> Result<AssumptionReport> {
    check_grid(ns)?;
    let mut points = Vec::with_capacity(ns.len());
    let mut ids = None;
    for (k, &n) in ns.iter().enumerate() {
        let (g, aff) = build(n)?;
        if k == 0 {
            // Fails fast when the largest grid point is out of budget.
            let source = a3_source(opts.a3_mode, g.kernel().is_some(), g.positively_associated());
            check_budget(ns[ns.len() - 1], g.p(), opts.replications, source)?;
        }
        ids.get_or_insert((g.model_id(), aff.record().recipe_id));
        points.push(analyze_point(g.as_ref(), &aff, opts, seed)?);
    }
    let (model_id, recipe_id) = ids.expect("grid is non-empty");
    report_from_points(points, model_id, recipe_id, seed, opts.tau)
}

/// Verdicts for precomputed grid points.
pub fn report_from_points(
    points: Vec<GridPoint>,
    model_id: ModelId,
    recipe_id: RecipeId,
    seed: u64,
    tau: f64,
) -> Result<AssumptionReport> {
    let ratio_points = |f: fn(&GridPoint) -> Ratio| -> Vec<RatioPoint> {
        points
            .iter()
            .map(|pt| {
                let r = f(pt);
                RatioPoint {
                    n: pt.n,
                    ratio: r.value,
                    rel_se: r.rel_se,
                }
            })
            .collect()
    };
    let series: [(u8, &str, Vec<RatioPoint>); 3] = [
        (1, "r1", ratio_points(|p| p.r1)),
        (2, "r2", ratio_points(|p| p.r2)),
        (3, "r3", ratio_points(|p| p.r3)),
    ];
    let mut verdicts = Vec::new();
    for (k, name, pts) in series {
        verdicts.push(AssumptionVerdict {
            assumption: k,
            ratio: name.into(),
            fit: scaling_verdict(&pts, tau)?,
        });
    }
    let overall = if verdicts.iter().any(|v| v.fit.verdict == Verdict::Fail) {
        Verdict::Fail
    } else if verdicts.iter().any(|v| v.fit.verdict == Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    let positive: Vec<&GridPoint> = points.iter().filter(|p| p.omega_frob > 0.0).collect();
    let omega_growth = (positive.len() >= 3).then(|| {
        let x: Vec<f64> = positive.iter().map(|p| (p.n as f64).ln()).collect();
        let y: Vec<f64> = positive.iter().map(|p| p.omega_frob.ln()).collect();
        let w: Vec<f64> = positive
            .iter()
            .map(|p| 1.0 / p.omega_frob_rel_se.max(1e-9).powi(2))
            .collect();
        let fit = weighted_line_fit(&x, &y, &w);
        GrowthFit {
            exponent: fit.slope,
            se: fit.slope_se,
        }
    });
    Ok(AssumptionReport {
        tool_version: crate::VERSION.into(),
        config_hash: None,
        model_id,
        recipe_id,
        seed,
        tau,
        n_grid: points.iter().map(|p| p.n).collect(),
        points,
        verdicts,
        omega_growth,
        overall,
    })
}

impl AssumptionReport {
    pub fn verdict(&self, assumption: u8) -> Option<&AssumptionVerdict> {
        self.verdicts.iter().find(|v| v.assumption == assumption)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per `(n, assumption)`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "config_hash",
            "tool_version",
            "n",
            "assumption",
            "sum",
            "se",
            "se_replication",
            "se_subsample",
            "omega_frob",
            "ratio",
            "ratio_rel_se",
            "slope",
            "verdict",
        ])?;
        let hash = self.config_hash.clone().unwrap_or_default();
        for pt in &self.points {
            for (k, sum, ratio) in [(1u8, pt.a1, pt.r1), (2, pt.a2, pt.r2), (3, pt.a3, pt.r3)] {
                let v = self.verdict(k).expect("three verdicts");
                out.write_record([
                    hash.clone(),
                    self.tool_version.clone(),
                    pt.n.to_string(),
                    k.to_string(),
                    fmt_f(sum.estimate),
                    fmt_f(sum.se),
                    fmt_f(sum.se_replication),
                    fmt_f(sum.se_subsample),
                    fmt_f(pt.omega_frob),
                    fmt_f(ratio.value),
                    fmt_f(ratio.rel_se),
                    v.fit.slope.map(fmt_f).unwrap_or_default(),
                    v.fit.verdict.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Two-column `log n, log |r_k|` series; zero ratios are skipped.
    pub fn plot_data(&self, assumption: u8) -> String {
        let mut s = format!(
            "# config_hash={} tool_version={}\n# log_n log_abs_r{assumption}\n",
            self.config_hash.as_deref().unwrap_or(""),
            self.tool_version
        );
        for pt in &self.points {
            let r = match assumption {
                1 => pt.r1,
                2 => pt.r2,
                _ => pt.r3,
            };
            if r.value != 0.0 && r.value.is_finite() {
                s.push_str(&format!(
                    "{} {}\n",
                    fmt_f((pt.n as f64).ln()),
                    fmt_f(r.value.abs().ln())
                ));
            }
        }
        s
    }
}

/// Shortest round-trip decimal form.
pub(crate) fn fmt_f(x: f64) -> String {
    format!("{x:?}")
}
