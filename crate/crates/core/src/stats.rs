//! Small statistical helpers shared by the estimators.

use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::OnceLock;

fn std_normal() -> &'static Normal {
    static N: OnceLock<Normal> = OnceLock::new();
    N.get_or_init(Normal::standard)
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Running mean and variance (Welford). Mergeable.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Running co-moment of a pair of series. Mergeable.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CoMoments {
    pub count: u64,
    mean_x: f64,
    mean_y: f64,
    c: f64,
}

impl CoMoments {
    pub fn push(&mut self, x: f64, y: f64) {
        self.count += 1;
        let n = self.count as f64;
        let dx = x - self.mean_x;
        self.mean_x += dx / n;
        self.mean_y += (y - self.mean_y) / n;
        self.c += dx * (y - self.mean_y);
    }

    pub fn merge(&mut self, other: &CoMoments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let dx = other.mean_x - self.mean_x;
        let dy = other.mean_y - self.mean_y;
        let w = self.count as f64 * other.count as f64 / n;
        self.mean_x += dx * other.count as f64 / n;
        self.mean_y += dy * other.count as f64 / n;
        self.c += other.c + dx * dy * w;
        self.count += other.count;
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.c / (self.count - 1) as f64
        }
    }
}

/// Unbiased sample covariance of two equal-length slices.
pub fn sample_cov(x: &[f64], y: &[f64]) -> f64 {
    let mut c = CoMoments::default();
    for (&a, &b) in x.iter().zip(y) {
        c.push(a, b);
    }
    c.covariance()
}

/// Weighted least squares fit of `y = a + b x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    /// Standard error of the slope: the larger of the weight-implied and the
    /// residual-implied value.
    pub slope_se: f64,
}

pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> LineFit {
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - xm).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - xm) * (c - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let k = x.len();
    let model_var = 1.0 / sxx;
    let resid_var = if k > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .zip(w)
            .map(|((a, c), b)| b * (c - intercept - slope * a).powi(2))
            .sum();
        rss / (k - 2) as f64 / sxx
    } else {
        0.0
    };
    LineFit {
        intercept,
        slope,
        slope_se: model_var.max(resid_var).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn moments_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..101).map(|i| ((i * 37) % 17) as f64 - 3.5).collect();
        let all: Moments = xs.iter().copied().collect();
        let mut left: Moments = xs[..40].iter().copied().collect();
        let right: Moments = xs[40..].iter().copied().collect();
        left.merge(&right);
        assert_relative_eq!(left.mean, all.mean, epsilon = 1e-12);
        assert_relative_eq!(left.variance(), all.variance(), epsilon = 1e-12);
    }

    #[test]
    fn comoments_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        let ys: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).cos() + xs[i]).collect();
        let mut a = CoMoments::default();
        let mut b = CoMoments::default();
        for i in 0..64 {
            if i < 20 {
                a.push(xs[i], ys[i]);
            } else {
                b.push(xs[i], ys[i]);
            }
        }
        a.merge(&b);
        assert_relative_eq!(a.covariance(), sample_cov(&xs, &ys), epsilon = 1e-12);
    }

    #[test]
    fn line_fit_recovers_exact_power_law() {
        let x: Vec<f64> = (0..5).map(|k| (1000.0f64 * 2f64.powi(k)).ln()).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 - 0.5 * v).collect();
        // weights are inverse variances: near-exact data
        let fit = weighted_line_fit(&x, &y, &[1e14; 5]);
        assert_relative_eq!(fit.slope, -0.5, epsilon = 1e-12);
        assert!(fit.slope_se < 1e-6);
    }

    #[test]
    fn normal_helpers() {
        assert_relative_eq!(norm_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(norm_quantile(0.975), 1.959963984540054, epsilon = 1e-9);
    }
}
