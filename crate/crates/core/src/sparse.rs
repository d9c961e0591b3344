//! Sparse feature vectors with 0-based, strictly increasing indices.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    /// Builds a vector from `(index, value)` pairs. Indices must be strictly
    /// increasing.
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                got: values.len(),
            });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "sparse indices must be strictly increasing".into(),
            ));
        }
        Ok(Self { indices, values })
    }

    pub fn from_pairs(pairs: &[(usize, f64)]) -> Result<Self> {
        Self::new(
            pairs.iter().map(|p| p.0).collect(),
            pairs.iter().map(|p| p.1).collect(),
        )
    }

    /// Keeps every entry of `dense`, including zeros.
    pub fn from_dense(dense: &[f64]) -> Self {
        Self {
            indices: (0..dense.len()).collect(),
            values: dense.to_vec(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    /// One past the largest index, or 0 for an empty vector.
    pub fn min_dim(&self) -> usize {
        self.indices.last().map_or(0, |&j| j + 1)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(j, v)| v * dense[j]).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `dense += alpha * self`
    pub fn axpy_into(&self, alpha: f64, dense: &mut [f64]) {
        for (j, v) in self.iter() {
            dense[j] += alpha * v;
        }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        self.axpy_into(1.0, &mut out);
        out
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.min_dim() > dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.min_dim(),
            });
        }
        Ok(())
    }

    /// Appends a trailing entry at `index`, which must exceed every stored index.
    pub(crate) fn push(&mut self, index: usize, value: f64) {
        debug_assert!(self.indices.last().map_or(true, |&j| j < index));
        self.indices.push(index);
        self.values.push(value);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
