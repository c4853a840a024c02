//! The normalization matrix and whitening.

use crate::affinity::AffinityMap;
use crate::error::{Error, Result};
use crate::kernel::{CovKernel, KernelKind};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Default relative eigenvalue floor for whitening.
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaMatrix {
    pub omega: Vec<Vec<f64>>,
    pub frobenius: f64,
    pub n_used: usize,
    /// Zero for analytic kernels.
    pub mc_se: Vec<Vec<f64>>,
    /// `|Omega - Omega^T|_F / |Omega|_F`.
    pub asymmetry: f64,
}

impl OmegaMatrix {
    pub fn new(omega: Vec<Vec<f64>>, mc_se: Vec<Vec<f64>>, n_used: usize) -> Result<Self> {
        let p = omega.len();
        if p == 0 || omega.iter().any(|r| r.len() != p) || mc_se.len() != p || mc_se.iter().any(|r| r.len() != p) {
            return Err(Error::ShapeMismatch("omega and mc_se must be square p x p".into()));
        }
        let frobenius = omega.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let mut asym = 0.0;
        for (d, row) in omega.iter().enumerate() {
            for (e, v) in row.iter().enumerate() {
                asym += (v - omega[e][d]).powi(2);
            }
        }
        let asymmetry = if frobenius > 0.0 { asym.sqrt() / frobenius } else { 0.0 };
        Ok(OmegaMatrix {
            omega,
            frobenius,
            n_used,
            mc_se,
            asymmetry,
        })
    }

    /// Analytic matrix with zero standard errors.
    pub fn exact(omega: Vec<Vec<f64>>, n_used: usize) -> Result<Self> {
        let p = omega.len();
        Self::new(omega, vec![vec![0.0; p]; p], n_used)
    }

    pub fn p(&self) -> usize {
        self.omega.len()
    }

    /// Relative standard error of the Frobenius norm, by first-order
    /// propagation from the entry standard errors.
    pub fn frobenius_rel_se(&self) -> f64 {
        if self.frobenius == 0.0 {
            return 0.0;
        }
        let mut v = 0.0;
        for (row, se_row) in self.omega.iter().zip(&self.mc_se) {
            for (w, se) in row.iter().zip(se_row) {
                v += (w * se).powi(2);
            }
        }
        v.sqrt() / (self.frobenius * self.frobenius)
    }

    /// `(Omega + Omega^T) / 2`.
    pub fn symmetrized(&self) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::from_fn(p, p, |d, e| 0.5 * (self.omega[d][e] + self.omega[e][d]))
    }

    pub fn whitener(&self, tol: f64) -> Result<Whitener> {
        Whitener::new(self, tol)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: OmegaMatrix = serde_json::from_str(s)?;
        Self::new(raw.omega, raw.mc_se, raw.n_used)
    }
}

/// `M^{1/2}` and `M^{-1/2}` of the symmetrized matrix.
#[derive(Clone, Debug)]
pub struct Whitener {
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
    pub min_eigenvalue: f64,
}

impl Whitener {
    /// Refuses when the smallest eigenvalue of the symmetrized matrix is at or
    /// below `tol * frobenius`.
    pub fn new(omega: &OmegaMatrix, tol: f64) -> Result<Self> {
        let m = omega.symmetrized();
        let eig = SymmetricEigen::new(m);
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let floor = tol * omega.frobenius;
        if !(min > floor) {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min,
                floor,
            });
        }
        let q = &eig.eigenvectors;
        let sq = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.sqrt()));
        let sqrt = q * DMatrix::from_diagonal(&sq) * q.transpose();
        let inv = sq.map(|s| 1.0 / s);
        let inv_sqrt = q * DMatrix::from_diagonal(&inv) * q.transpose();
        Ok(Whitener {
            sqrt,
            inv_sqrt,
            min_eigenvalue: min,
        })
    }

    pub fn p(&self) -> usize {
        self.sqrt.nrows()
    }

    pub fn whiten(&self, s: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(s);
        (&self.inv_sqrt * v).iter().copied().collect()
    }

    /// Multiplies by `M^{1/2}`.
    pub fn color(&self, s: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(s);
        (&self.sqrt * v).iter().copied().collect()
    }
}

/// `M^{-1/2} s` with `M` the symmetrized omega.
pub fn whiten(omega: &OmegaMatrix, s: &[f64], tol: f64) -> Result<Vec<f64>> {
    if s.len() != omega.p() {
        return Err(Error::ShapeMismatch(format!(
            "vector of length {} for a {}x{} omega",
            s.len(),
            omega.p(),
            omega.p()
        )));
    }
    Ok(Whitener::new(omega, tol)?.whiten(s))
}

/// Partial sums of omega over a range of observation rows `i`. Merging the
/// partials of disjoint ranges gives the full sum.
#[derive(Clone, Debug, PartialEq)]
pub struct OmegaPartial {
    p: usize,
    sum: Vec<f64>,
    var: Vec<f64>,
}

impl OmegaPartial {
    pub fn empty(p: usize) -> Self {
        OmegaPartial {
            p,
            sum: vec![0.0; p * p],
            var: vec![0.0; p * p],
        }
    }

    pub fn merge(mut self, other: &OmegaPartial) -> Self {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.var.iter_mut().zip(&other.var) {
            *a += b;
        }
        self
    }

    pub fn finish(self, kind: KernelKind, n_used: usize) -> Result<OmegaMatrix> {
        let p = self.p;
        let omega: Vec<Vec<f64>> = self.sum.chunks(p).map(|r| r.to_vec()).collect();
        let se: Vec<Vec<f64>> = match kind {
            KernelKind::Analytic => vec![vec![0.0; p]; p],
            KernelKind::MonteCarlo => self
                .var
                .chunks(p)
                .map(|r| r.iter().map(|v| v.sqrt()).collect())
                .collect(),
        };
        OmegaMatrix::new(omega, se, n_used)
    }
}

/// Omega restricted to observation rows in `rows`.
pub fn omega_partial(kernel: &CovKernel, aff: &AffinityMap, rows: Range<usize>) -> Result<OmegaPartial> {
    check_shapes(kernel, aff)?;
    let p = aff.p();
    let mut part = OmegaPartial::empty(p);
    for i in rows {
        for d in 0..p {
            let a = i * p + d;
            for b in aff.members(a) {
                let v = kernel.eval(a, b).ok_or_else(|| kernel.missing(a, b))?;
                let slot = d * p + b % p;
                part.sum[slot] += v;
                let se = kernel.se(a, b).unwrap_or(0.0);
                part.var[slot] += se * se;
            }
        }
    }
    Ok(part)
}

/// `omega[d][d'] = sum_i sum_{(j, d') in A_(i, d)} cov((i, d), (j, d'))`.
///
/// Monte Carlo standard errors treat the summed terms as independent.
pub fn omega_from_kernel(kernel: &CovKernel, aff: &AffinityMap) -> Result<OmegaMatrix> {
    check_shapes(kernel, aff)?;
    let n = aff.n();
    // Fixed shard size keeps the summation order independent of the thread count.
    let chunk = 512;
    let parts: Vec<OmegaPartial> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|s| omega_partial(kernel, aff, s * chunk..((s + 1) * chunk).min(n)))
        .collect::<Result<_>>()?;
    let total = parts
        .iter()
        .fold(OmegaPartial::empty(aff.p()), |acc, part| acc.merge(part));
    total.finish(kernel.kind(), n)
}

fn check_shapes(kernel: &CovKernel, aff: &AffinityMap) -> Result<()> {
    if kernel.n() != aff.n() || kernel.p() != aff.p() {
        return Err(Error::ShapeMismatch(format!(
            "kernel is ({}, {}) but affinity map is ({}, {})",
            kernel.n(),
            kernel.p(),
            aff.n(),
            aff.p()
        )));
    }
    Ok(())
}
