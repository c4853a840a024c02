//! Pairwise covariance carriers.
//!
//! Analytic kernels come from generators; Monte Carlo kernels come from
//! [`empirical_cov_kernel`] and only cover the pairs they were asked for.

use crate::affinity::AffinityMap;
use crate::array::{check_batch, unflat, SampleArray};
use crate::error::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Analytic,
    MonteCarlo,
}

/// Covariance between any two flat indices of a fixed-size array.
pub trait PairCov: Send + Sync {
    /// Number of flat indices covered.
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn cov(&self, a: usize, b: usize) -> f64;
}

#[derive(Clone)]
enum Body {
    /// Scalar stationary series: `cov(i, j) = acv[|i - j|]`, zero past the end.
    Stationary {
        acv: Vec<f64>,
    },
    /// Symmetric sparse matrix with both triangles stored.
    Sparse {
        offsets: Vec<usize>,
        cols: Vec<u32>,
        vals: Vec<f64>,
    },
    Pairwise(Arc<dyn PairCov>),
    /// Keys are `(min, max)` flat-index pairs; values are `(cov, se)`.
    Empirical {
        entries: BTreeMap<(usize, usize), (f64, f64)>,
    },
}

#[derive(Clone)]
pub struct CovKernel {
    kind: KernelKind,
    n: usize,
    p: usize,
    body: Body,
}

impl fmt::Debug for CovKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body = match &self.body {
            Body::Stationary { acv } => format!("stationary(lags={})", acv.len()),
            Body::Sparse { vals, .. } => format!("sparse(nnz={})", vals.len()),
            Body::Pairwise(_) => "pairwise".to_string(),
            Body::Empirical { entries } => format!("empirical(pairs={})", entries.len()),
        };
        f.debug_struct("CovKernel")
            .field("kind", &self.kind)
            .field("n", &self.n)
            .field("p", &self.p)
            .field("body", &body)
            .finish()
    }
}

impl CovKernel {
    pub fn stationary(n: usize, acv: Vec<f64>) -> Self {
        CovKernel {
            kind: KernelKind::Analytic,
            n,
            p: 1,
            body: Body::Stationary { acv },
        }
    }

    /// Builds a sparse kernel from `(a, b, cov)` triples. Each unordered pair
    /// must be listed once; the mirror entry is added here.
    pub fn sparse(n: usize, p: usize, triples: &[(usize, usize, f64)]) -> Self {
        let len = n * p;
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); len];
        for &(a, b, v) in triples {
            rows[a].push((b as u32, v));
            if a != b {
                rows[b].push((a as u32, v));
            }
        }
        let mut offsets = Vec::with_capacity(len + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|e| e.0);
            let start = cols.len();
            for (c, v) in row {
                if cols.len() > start && cols[cols.len() - 1] == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            offsets.push(cols.len());
        }
        CovKernel {
            kind: KernelKind::Analytic,
            n,
            p,
            body: Body::Sparse { offsets, cols, vals },
        }
    }

    pub fn pairwise(n: usize, p: usize, cov: Arc<dyn PairCov>) -> Self {
        debug_assert_eq!(cov.len(), n * p);
        CovKernel {
            kind: KernelKind::Analytic,
            n,
            p,
            body: Body::Pairwise(cov),
        }
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Covariance of flat indices `a` and `b`, or `None` if the kernel does
    /// not cover the pair.
    pub fn eval(&self, a: usize, b: usize) -> Option<f64> {
        match &self.body {
            Body::Stationary { acv } => Some(acv.get(a.abs_diff(b)).copied().unwrap_or(0.0)),
            Body::Sparse { offsets, cols, vals } => {
                let row = &cols[offsets[a]..offsets[a + 1]];
                Some(match row.binary_search(&(b as u32)) {
                    Ok(k) => vals[offsets[a] + k],
                    Err(_) => 0.0,
                })
            }
            Body::Pairwise(c) => Some(c.cov(a, b)),
            Body::Empirical { entries } => entries.get(&(a.min(b), a.max(b))).map(|e| e.0),
        }
    }

    /// Standard error of [`CovKernel::eval`]; zero for analytic kernels.
    pub fn se(&self, a: usize, b: usize) -> Option<f64> {
        match &self.body {
            Body::Empirical { entries } => entries.get(&(a.min(b), a.max(b))).map(|e| e.1),
            _ => Some(0.0),
        }
    }

    pub(crate) fn missing(&self, a: usize, b: usize) -> Error {
        Error::MissingPair {
            first: unflat(a, self.p),
            second: unflat(b, self.p),
        }
    }

    /// `sum_a sum_b cov(a, b)` over all flat index pairs: the variance of the
    /// total of all entries.
    pub fn total_sum(&self) -> Result<f64> {
        match &self.body {
            Body::Stationary { acv } => {
                let n = self.n;
                let mut s = acv.first().copied().unwrap_or(0.0) * n as f64;
                for (l, &v) in acv.iter().enumerate().take(n).skip(1) {
                    s += 2.0 * (n - l) as f64 * v;
                }
                Ok(s)
            }
            Body::Sparse { vals, .. } => Ok(vals.iter().sum()),
            Body::Pairwise(c) => {
                let len = self.n * self.p;
                Ok((0..len)
                    .into_par_iter()
                    .map(|a| {
                        let mut s = c.cov(a, a);
                        for b in a + 1..len {
                            s += 2.0 * c.cov(a, b);
                        }
                        s
                    })
                    .collect::<Vec<_>>()
                    .into_iter()
                    .sum())
            }
            Body::Empirical { .. } => Err(Error::InvalidParameter(
                "total covariance sum needs an analytic kernel".into(),
            )),
        }
    }

    /// `sum_a sum_{b in A_a} cov(a, b)`.
    pub fn inside_sum(&self, aff: &AffinityMap) -> Result<f64> {
        let mut s = 0.0;
        for a in 0..aff.len() {
            for b in aff.members(a) {
                s += self.eval(a, b).ok_or_else(|| self.missing(a, b))?;
            }
        }
        Ok(s)
    }

    /// `sum_a sum_{b not in A_a} cov(a, b)`: the outside-set covariance mass.
    pub fn outside_sum(&self, aff: &AffinityMap) -> Result<f64> {
        match &self.body {
            Body::Sparse { offsets, cols, vals } => {
                let mut s = 0.0;
                for a in 0..aff.len() {
                    for k in offsets[a]..offsets[a + 1] {
                        if !aff.contains(a, cols[k] as usize) {
                            s += vals[k];
                        }
                    }
                }
                Ok(s)
            }
            // Direct summation: subtracting the inside sum from the total
            // leaves cancellation noise where the exact answer is zero.
            Body::Stationary { acv } => {
                let n = self.n;
                Ok((0..n)
                    .into_par_iter()
                    .map(|a| {
                        let mut s = 0.0;
                        for (h, &v) in acv.iter().enumerate().skip(1) {
                            if h < n - a && !aff.contains(a, a + h) {
                                s += v;
                            }
                            if h <= a && !aff.contains(a, a - h) {
                                s += v;
                            }
                        }
                        s
                    })
                    .collect::<Vec<_>>()
                    .into_iter()
                    .sum())
            }
            Body::Pairwise(c) => {
                let len = self.n * self.p;
                Ok((0..len)
                    .into_par_iter()
                    .map(|a| {
                        (0..len)
                            .filter(|&b| !aff.contains(a, b))
                            .map(|b| c.cov(a, b))
                            .sum::<f64>()
                    })
                    .collect::<Vec<_>>()
                    .into_iter()
                    .sum())
            }
            Body::Empirical { .. } => Err(Error::InvalidParameter(
                "outside-set covariance sum needs an analytic kernel".into(),
            )),
        }
    }
}

/// Sample covariance of the requested flat-index pairs across replications.
///
/// Pairs are symmetrized: `(a, b)` and `(b, a)` share one entry. The standard
/// error is the sample standard deviation of centered cross products over
/// `sqrt(R)`.
pub fn empirical_cov_kernel(reps: &[SampleArray], pairs: &[(usize, usize)]) -> Result<CovKernel> {
    let (n, p) = check_batch(reps, 2)?;
    let len = n * p;
    if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= len || b >= len) {
        return Err(Error::ShapeMismatch(format!(
            "pair ({a}, {b}) out of range for {len} indices"
        )));
    }
    let mut keys: Vec<(usize, usize)> = pairs.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    keys.sort_unstable();
    keys.dedup();

    let r = reps.len() as f64;
    let mut used: Vec<usize> = keys.iter().flat_map(|&(a, b)| [a, b]).collect();
    used.sort_unstable();
    used.dedup();
    let means: BTreeMap<usize, f64> = used
        .iter()
        .map(|&a| (a, reps.iter().map(|x| x.values()[a]).sum::<f64>() / r))
        .collect();

    let entries: Vec<((usize, usize), (f64, f64))> = keys
        .par_iter()
        .map(|&(a, b)| {
            let (ma, mb) = (means[&a], means[&b]);
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for x in reps {
                let v = x.values();
                let prod = (v[a] - ma) * (v[b] - mb);
                sum += prod;
                sumsq += prod * prod;
            }
            let cov = sum / (r - 1.0);
            let mean_prod = sum / r;
            let var_prod = ((sumsq - r * mean_prod * mean_prod) / (r - 1.0)).max(0.0);
            ((a, b), (cov, (var_prod / r).sqrt()))
        })
        .collect();

    Ok(CovKernel {
        kind: KernelKind::MonteCarlo,
        n,
        p,
        body: Body::Empirical {
            entries: entries.into_iter().collect(),
        },
    })
}

/// All pairs `(a, b)` with `b` in the affinity set of `a`.
pub fn affinity_pairs(aff: &AffinityMap) -> Vec<(usize, usize)> {
    (0..aff.len())
        .flat_map(|a| aff.members(a).map(move |b| (a, b)))
        .collect()
}
