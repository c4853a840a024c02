//! Log-log slope tests turning the vanishing-ratio conditions into verdicts.

use crate::error::{invalid, Result};
use crate::stats::weighted_line_fit;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Default slope margin.
pub const DEFAULT_TAU: f64 = 0.02;
/// Minimum grid size.
pub const MIN_GRID: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        })
    }
}

/// Sign pattern of a ratio series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignPattern {
    Positive,
    Negative,
    Mixed,
    Zero,
}

/// One ratio observation at grid size `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub n: usize,
    pub ratio: f64,
    pub rel_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeVerdict {
    pub verdict: Verdict,
    /// Fitted `d log |r| / d log n`; absent when the series is identically zero
    /// or too sparse to fit.
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
    /// `slope -+ 2 se`.
    pub ci: Option<(f64, f64)>,
    pub signs: SignPattern,
    pub identically_zero: bool,
    pub points_used: usize,
}

/// Weighted least squares of `log |r|` on `log n`, weights `1 / relse^2`.
///
/// PASS when `slope + 2 se < -tau`, FAIL when `slope - 2 se > tau`, else
/// INCONCLUSIVE. A series that is exactly zero at every grid point passes.
pub fn scaling_verdict(points: &[RatioPoint], tau: f64) -> Result<SlopeVerdict> {
    if points.len() < MIN_GRID {
        return Err(invalid(format!(
            "need at least {MIN_GRID} grid points, got {}",
            points.len()
        )));
    }
    if !(tau >= 0.0) {
        return Err(invalid("slope margin must be nonnegative"));
    }
    let pos = points.iter().filter(|p| p.ratio > 0.0).count();
    let neg = points.iter().filter(|p| p.ratio < 0.0).count();
    let signs = match (pos, neg) {
        (0, 0) => SignPattern::Zero,
        (_, 0) => SignPattern::Positive,
        (0, _) => SignPattern::Negative,
        _ => SignPattern::Mixed,
    };
    if signs == SignPattern::Zero {
        return Ok(SlopeVerdict {
            verdict: Verdict::Pass,
            slope: None,
            slope_se: None,
            ci: None,
            signs,
            identically_zero: true,
            points_used: 0,
        });
    }
    let used: Vec<&RatioPoint> = points
        .iter()
        .filter(|p| p.ratio != 0.0 && p.ratio.is_finite())
        .collect();
    if used.len() < 3 {
        return Ok(SlopeVerdict {
            verdict: Verdict::Inconclusive,
            slope: None,
            slope_se: None,
            ci: None,
            signs,
            identically_zero: false,
            points_used: used.len(),
        });
    }
    let x: Vec<f64> = used.iter().map(|p| (p.n as f64).ln()).collect();
    let y: Vec<f64> = used.iter().map(|p| p.ratio.abs().ln()).collect();
    let w: Vec<f64> = used.iter().map(|p| 1.0 / p.rel_se.max(1e-9).powi(2)).collect();
    let fit = weighted_line_fit(&x, &y, &w);
    let lo = fit.slope - 2.0 * fit.slope_se;
    let hi = fit.slope + 2.0 * fit.slope_se;
    let verdict = if hi < -tau {
        Verdict::Pass
    } else if lo > tau {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    };
    Ok(SlopeVerdict {
        verdict,
        slope: Some(fit.slope),
        slope_se: Some(fit.slope_se),
        ci: Some((lo, hi)),
        signs,
        identically_zero: false,
        points_used: used.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(f: impl Fn(f64) -> f64) -> Vec<RatioPoint> {
        [1000, 2000, 4000, 8000, 16000]
            .iter()
            .map(|&n| RatioPoint {
                n,
                ratio: f(n as f64),
                rel_se: 0.01,
            })
            .collect()
    }

    #[test]
    fn decaying_ratio_passes() {
        let v = scaling_verdict(&series(|n| 3.0 / n.sqrt()), DEFAULT_TAU).unwrap();
        assert_eq!(v.verdict, Verdict::Pass);
        assert!((v.slope.unwrap() + 0.5).abs() < 1e-9);
    }

    #[test]
    fn constant_ratio_does_not_pass() {
        let v = scaling_verdict(&series(|_| 0.7), DEFAULT_TAU).unwrap();
        assert_ne!(v.verdict, Verdict::Pass);
    }

    #[test]
    fn growing_ratio_fails() {
        let v = scaling_verdict(&series(|n| n.powf(0.3)), DEFAULT_TAU).unwrap();
        assert_eq!(v.verdict, Verdict::Fail);
    }

    #[test]
    fn zero_series_passes_and_negative_is_flagged() {
        let v = scaling_verdict(&series(|_| 0.0), DEFAULT_TAU).unwrap();
        assert!(v.identically_zero && v.verdict == Verdict::Pass);
        let v = scaling_verdict(&series(|n| -1.0 / n), DEFAULT_TAU).unwrap();
        assert_eq!(v.signs, SignPattern::Negative);
        assert_eq!(v.verdict, Verdict::Pass);
    }

    #[test]
    fn short_grid_is_rejected() {
        assert!(scaling_verdict(&series(|n| n)[..4], DEFAULT_TAU).is_err());
    }
}
