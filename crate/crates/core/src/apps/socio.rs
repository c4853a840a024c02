//! Socio-economic distance and the spatial-by-group covariance kernel.

use crate::affinity::check_group_matrix;
use crate::error::{invalid, Error, Result};
use crate::kernel::{CovKernel, PairCov};
use crate::models::{Locations, MaternParams, Metric};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Largest `n` for the dense eigenvalue check.
pub const MAX_PSD_CHECK_N: usize = 3000;

/// Euclidean distance between group-composition vectors.
pub fn socio_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "composition vectors have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SocioCovSpec {
    pub locations: Locations,
    pub groups: Vec<usize>,
    /// `p[g][h]`: symmetric, in `[0, 1]`, unit diagonal.
    pub affinity: Vec<Vec<f64>>,
    pub spatial: MaternParams,
}

impl SocioCovSpec {
    pub fn validate(&self) -> Result<()> {
        check_group_matrix(&self.affinity)?;
        self.spatial.validate()?;
        if self.groups.len() != self.locations.len() {
            return Err(Error::ShapeMismatch("one group label per location is required".into()));
        }
        if let Some(&g) = self.groups.iter().find(|&&g| g >= self.affinity.len()) {
            return Err(invalid(format!("group label {g} exceeds the affinity matrix")));
        }
        Ok(())
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        let h = self.locations.distance(i, j, Metric::Euclidean);
        self.spatial.cov(h) * self.affinity[self.groups[i]][self.groups[j]]
    }
}

struct SocioPair(SocioCovSpec);

impl PairCov for SocioPair {
    fn len(&self) -> usize {
        self.0.groups.len()
    }

    fn cov(&self, a: usize, b: usize) -> f64 {
        self.0.cov(a, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdReport {
    /// Absent when `n` exceeds the dense check limit.
    pub min_eigenvalue: Option<f64>,
    pub psd: Option<bool>,
}

/// `cov(i, j) = C(|s_i - s_j|) p[g_i][g_j]`, with a positive semidefiniteness
/// report. An indefinite kernel is reported, not refused.
pub fn socio_cov_kernel(spec: SocioCovSpec) -> Result<(CovKernel, PsdReport)> {
    spec.validate()?;
    let n = spec.groups.len();
    let report = if n <= MAX_PSD_CHECK_N {
        let m = DMatrix::from_fn(n, n, |i, j| spec.cov(i, j));
        let min = SymmetricEigen::new(m)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let scale = spec.spatial.sigma2 * n as f64;
        PsdReport {
            min_eigenvalue: Some(min),
            psd: Some(min >= -1e-10 * scale),
        }
    } else {
        PsdReport {
            min_eigenvalue: None,
            psd: None,
        }
    };
    Ok((CovKernel::pairwise(n, 1, Arc::new(SocioPair(spec))), report))
}
