//! One replication of a triangular array: `n` observations of `p` de-meaned
//! coordinates, stored row-major so that flat index `(i, d) -> i * p + d`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Generator tag carried by every sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    MDependent,
    AndrewsAr,
    LatticeField,
    EdgeShockGraph,
    SirDiffusion,
    SbmDiffusion,
    MaternGp,
}

impl ModelId {
    pub const ALL: [ModelId; 7] = [
        ModelId::MDependent,
        ModelId::AndrewsAr,
        ModelId::LatticeField,
        ModelId::EdgeShockGraph,
        ModelId::SirDiffusion,
        ModelId::SbmDiffusion,
        ModelId::MaternGp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::MDependent => "m_dependent",
            ModelId::AndrewsAr => "andrews_ar",
            ModelId::LatticeField => "lattice_field",
            ModelId::EdgeShockGraph => "edge_shock_graph",
            ModelId::SirDiffusion => "sir_diffusion",
            ModelId::SbmDiffusion => "sbm_diffusion",
            ModelId::MaternGp => "matern_gp",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown model id `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleArray {
    n: usize,
    p: usize,
    values: Vec<f64>,
    model_id: ModelId,
    seed: u64,
    positively_associated: bool,
}

impl SampleArray {
    /// Builds an array from row-major values, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(
        n: usize,
        p: usize,
        values: Vec<f64>,
        model_id: ModelId,
        seed: u64,
        positively_associated: bool,
    ) -> Result<Self> {
        if p == 0 {
            return Err(Error::ShapeMismatch("p must be at least 1".into()));
        }
        if values.len() != n * p {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for n={n}, p={p}, got {}",
                n * p,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!(
                "non-finite value at ({}, {})",
                k / p,
                k % p
            )));
        }
        Ok(SampleArray {
            n,
            p,
            values,
            model_id,
            seed,
            positively_associated,
        })
    }

    /// Scalar series (p = 1).
    pub fn scalar(values: Vec<f64>, model_id: ModelId, seed: u64, positively_associated: bool) -> Result<Self> {
        let n = values.len();
        Self::new(n, 1, values, model_id, seed, positively_associated)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of scalar entries, `n * p`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, d: usize) -> f64 {
        self.values[i * self.p + d]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn model_id(&self) -> ModelId {
        self.model_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn positively_associated(&self) -> bool {
        self.positively_associated
    }

    /// Column sums: the vector `S^n = sum_i Z_i`.
    pub fn sum_vector(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.p];
        for row in self.values.chunks_exact(self.p) {
            for (acc, v) in s.iter_mut().zip(row) {
                *acc += v;
            }
        }
        s
    }

    pub fn same_shape(&self, other: &SampleArray) -> bool {
        self.n == other.n && self.p == other.p && self.model_id == other.model_id
    }
}

/// Flat index of `(i, d)`.
#[inline]
pub fn flat(i: usize, d: usize, p: usize) -> usize {
    i * p + d
}

/// Inverse of [`flat`].
#[inline]
pub fn unflat(a: usize, p: usize) -> (usize, usize) {
    (a / p, a % p)
}

/// Checks that a batch of replications is non-empty and shares `(n, p, model_id)`.
pub(crate) fn check_batch(reps: &[SampleArray], min: usize) -> Result<(usize, usize)> {
    if reps.len() < min {
        return Err(Error::InsufficientReplications {
            needed: min,
            got: reps.len(),
        });
    }
    let first = &reps[0];
    if let Some(bad) = reps.iter().position(|r| !r.same_shape(first)) {
        return Err(Error::ShapeMismatch(format!(
            "replication {bad} has shape ({}, {}, {}) but replication 0 has ({}, {}, {})",
            reps[bad].n, reps[bad].p, reps[bad].model_id, first.n, first.p, first.model_id
        )));
    }
    Ok((first.n, first.p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(n: usize, p: usize, v: Vec<f64>) -> SampleArray {
        SampleArray::new(n, p, v, ModelId::MDependent, 0, true).unwrap()
    }

    #[test]
    fn sum_vector_examples() {
        assert_eq!(arr(3, 1, vec![1.0, -2.0, 1.0]).sum_vector(), vec![0.0]);
        assert_eq!(arr(4, 3, vec![0.0; 12]).sum_vector(), vec![0.0; 3]);
        assert_eq!(arr(2, 2, vec![1.0, 2.0, 3.0, -2.0]).sum_vector(), vec![4.0, 0.0]);
    }

    #[test]
    fn rejects_bad_shapes_and_non_finite() {
        assert!(SampleArray::new(2, 2, vec![0.0; 3], ModelId::MDependent, 0, true).is_err());
        assert!(SampleArray::new(1, 1, vec![f64::NAN], ModelId::MDependent, 0, true).is_err());
        assert!(SampleArray::new(1, 0, vec![], ModelId::MDependent, 0, true).is_err());
    }

    #[test]
    fn flat_index_round_trip() {
        for a in 0..30 {
            let (i, d) = unflat(a, 3);
            assert_eq!(flat(i, d, 3), a);
        }
    }

    #[test]
    fn model_id_parses() {
        for m in ModelId::ALL {
            assert_eq!(m.as_str().parse::<ModelId>().unwrap(), m);
        }
        assert!("nope".parse::<ModelId>().is_err());
    }
}
