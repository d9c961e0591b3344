//! Labeled sparse datasets: libsvm I/O, logical update views and seeded
//! synthetic generators.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::sparse::SparseVector;

/// Read access to a set of labeled rows. Implemented by owned datasets and by
/// index-masked views so solvers never copy data to drop an instance.
pub trait Instances: Sync {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn row(&self, i: usize) -> &SparseVector;
    fn label(&self, i: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseDataset {
    dim: usize,
    rows: Vec<SparseVector>,
    labels: Vec<f64>,
}

/// Maps any real label to ±1: positive values become +1, everything else −1.
pub fn binarize_label(raw: f64) -> f64 {
    if raw > 0.0 {
        1.0
    } else {
        -1.0
    }
}

impl SparseDataset {
    pub fn new(dim: usize, rows: Vec<SparseVector>, labels: Vec<f64>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        for row in &rows {
            row.check_dim(dim)?;
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidParameter(format!("label {bad} is not ±1")));
        }
        Ok(Self { dim, rows, labels })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &SparseVector {
        &self.rows[i]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn rows(&self) -> &[SparseVector] {
        &self.rows
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(SparseVector::nnz).sum()
    }

    /// Widens the feature space to `dim` columns.
    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        for row in &self.rows {
            row.check_dim(dim)?;
        }
        self.dim = dim;
        Ok(self)
    }

    /// Appends a constant-1 feature as column `dim`. It is regularized like
    /// every other coefficient.
    pub fn with_bias(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.push(self.dim, 1.0);
                r
            })
            .collect();
        Self {
            dim: self.dim + 1,
            rows,
            labels: self.labels.clone(),
        }
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut rows = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.rows.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.rows.len(),
                });
            }
            rows.push(self.rows[i].clone());
            labels.push(self.labels[i]);
        }
        Ok(Self {
            dim: self.dim,
            rows,
            labels,
        })
    }

    /// Materializes the updated dataset: kept rows in their original order,
    /// followed by the additions. `self` is left untouched.
    pub fn apply_update(&self, plan: &UpdatePlan) -> Result<Self> {
        plan.validate(self)?;
        let removed: HashSet<usize> = plan.removed.iter().copied().collect();
        let n_new = self.len() - removed.len() + plan.added.len();
        let mut rows = Vec::with_capacity(n_new);
        let mut labels = Vec::with_capacity(n_new);
        for (i, (row, &y)) in self.rows.iter().zip(&self.labels).enumerate() {
            if !removed.contains(&i) {
                rows.push(row.clone());
                labels.push(y);
            }
        }
        for (row, y) in &plan.added {
            rows.push(row.clone());
            labels.push(*y);
        }
        Ok(Self {
            dim: self.dim,
            rows,
            labels,
        })
    }
}

impl Instances for SparseDataset {
    fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    fn row(&self, i: usize) -> &SparseVector {
        &self.rows[i]
    }

    fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }
}

/// A dataset with one instance masked out.
#[derive(Debug, Clone, Copy)]
pub struct LeaveOneOut<'a> {
    base: &'a SparseDataset,
    held_out: usize,
}

impl<'a> LeaveOneOut<'a> {
    pub fn new(base: &'a SparseDataset, held_out: usize) -> Result<Self> {
        if held_out >= base.len() {
            return Err(Error::IndexOutOfRange {
                index: held_out,
                len: base.len(),
            });
        }
        Ok(Self { base, held_out })
    }

    pub fn held_out(&self) -> usize {
        self.held_out
    }

    fn map(&self, i: usize) -> usize {
        if i < self.held_out {
            i
        } else {
            i + 1
        }
    }
}

impl Instances for LeaveOneOut<'_> {
    fn dim(&self) -> usize {
        self.base.dim
    }

    fn len(&self) -> usize {
        self.base.len() - 1
    }

    fn row(&self, i: usize) -> &SparseVector {
        self.base.row(self.map(i))
    }

    fn label(&self, i: usize) -> f64 {
        self.base.label(self.map(i))
    }
}

/// Instances added to and removed from a base dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdatePlan {
    pub added: Vec<(SparseVector, f64)>,
    /// Row indices into the base dataset.
    pub removed: Vec<usize>,
}

impl UpdatePlan {
    pub fn n_added(&self) -> usize {
        self.added.len()
    }

    pub fn n_removed(&self) -> usize {
        self.removed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }

    pub fn validate(&self, base: &SparseDataset) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.removed.len());
        for &i in &self.removed {
            if i >= base.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: base.len(),
                });
            }
            if !seen.insert(i) {
                return Err(Error::DuplicateIndex(i));
            }
        }
        for (x, y) in &self.added {
            x.check_dim(base.dim())?;
            if *y != 1.0 && *y != -1.0 {
                return Err(Error::InvalidParameter(format!("label {y} is not ±1")));
            }
        }
        Ok(())
    }

    /// Removed instances as `(row, label)` pairs borrowed from `base`.
    pub fn removed_instances<'a>(
        &'a self,
        base: &'a SparseDataset,
    ) -> impl Iterator<Item = (&'a SparseVector, f64)> + 'a {
        self.removed.iter().map(move |&i| (base.row(i), base.label(i)))
    }

    pub fn added_instances(&self) -> impl Iterator<Item = (&SparseVector, f64)> + '_ {
        self.added.iter().map(|(x, y)| (x, *y))
    }

    /// Draws `n_remove` distinct rows of `base` and `n_add` distinct rows of
    /// `pool`, uniformly without replacement.
    pub fn sample(
        base: &SparseDataset,
        pool: &SparseDataset,
        n_add: usize,
        n_remove: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_remove > base.len() || n_add > pool.len() {
            return Err(Error::InvalidParameter(format!(
                "cannot draw {n_remove} removals from {} rows and {n_add} additions from {} rows",
                base.len(),
                pool.len()
            )));
        }
        if pool.dim() > base.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                got: pool.dim(),
            });
        }
        let mut removed = sample(rng, base.len(), n_remove).into_vec();
        removed.sort_unstable();
        let added = sample(rng, pool.len(), n_add)
            .into_iter()
            .map(|i| (pool.row(i).clone(), pool.label(i)))
            .collect();
        Ok(Self { added, removed })
    }
}

/// Splits `ds` into a base training set and an update: `n_add` rows are held
/// out of the base to be added back later, and `n_remove` rows of the base
/// are scheduled for removal. Rows are drawn uniformly without replacement.
pub fn split_for_update(
    ds: &SparseDataset,
    n_add: usize,
    n_remove: usize,
    rng: &mut impl Rng,
) -> Result<(SparseDataset, UpdatePlan)> {
    if n_add + n_remove > ds.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot modify {} of {} instances",
            n_add + n_remove,
            ds.len()
        )));
    }
    let mut held = sample(rng, ds.len(), n_add).into_vec();
    held.sort_unstable();
    let held_set: HashSet<usize> = held.iter().copied().collect();
    let keep: Vec<usize> = (0..ds.len()).filter(|i| !held_set.contains(i)).collect();
    let base = ds.subset(&keep)?;
    let pool = ds.subset(&held)?;
    let plan = UpdatePlan::sample(&base, &pool, n_add, n_remove, rng)?;
    Ok((base, plan))
}

/// Parses libsvm text: one `<label> <idx>:<val> ...` record per line with
/// ascending 1-based indices. The dimension is the largest index seen unless
/// `dim` pins it.
pub fn parse_libsvm(text: &[u8], dim: Option<usize>) -> Result<SparseDataset> {
    let text = std::str::from_utf8(text).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("invalid UTF-8: {e}"),
    })?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        let mut tokens = line.split_ascii_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue;
        };
        let err = |msg: String| Error::Parse { line: lineno, msg };
        let raw: f64 = label_tok
            .parse()
            .map_err(|_| err(format!("bad label {label_tok:?}")))?;
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected idx:val, found {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(format!("bad feature index {idx:?}")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based".into()));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("bad feature value {val:?}")))?;
            let j = idx - 1;
            if indices.last().is_some_and(|&prev| prev >= j) {
                return Err(err(format!("feature index {idx} is not ascending")));
            }
            indices.push(j);
            values.push(val);
        }
        max_index = max_index.max(indices.last().map_or(0, |&j| j + 1));
        rows.push(SparseVector::new(indices, values)?);
        labels.push(binarize_label(raw));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dim = match dim {
        Some(d) if d < max_index => {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: max_index,
            })
        }
        Some(d) => d,
        None => max_index,
    };
    SparseDataset::new(dim, rows, labels)
}

/// Writes libsvm text that [`parse_libsvm`] reads back bit-identically.
pub fn write_libsvm(ds: &SparseDataset) -> String {
    let mut out = String::new();
    for (row, &y) in ds.rows.iter().zip(&ds.labels) {
        out.push_str(if y > 0.0 { "+1" } else { "-1" });
        for (j, v) in row.iter() {
            let _ = write!(out, " {}:{}", j + 1, v);
        }
        out.push('\n');
    }
    out
}

/// Two Gaussian clusters with identity covariance whose means sit at
/// `±separation / 2` along the all-ones diagonal direction.
pub fn make_synthetic(seed: u64, n: usize, d: usize, separation: f64) -> Result<SparseDataset> {
    if n < 2 || d < 1 {
        return Err(Error::InvalidParameter(format!(
            "synthetic data needs n >= 2 and d >= 1 (got n={n}, d={d})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = 0.5 * separation / (d as f64).sqrt();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = match i {
            0 => 1.0,
            1 => -1.0,
            _ => {
                if rng.gen_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        let dense: Vec<f64> = (0..d)
            .map(|_| y * shift + rng.sample::<f64, _>(StandardNormal))
            .collect();
        rows.push(SparseVector::from_dense(&dense));
        labels.push(y);
    }
    SparseDataset::new(d, rows, labels)
}

/// Gaussian RBF features `phi_k(x) = exp(-gamma ||x - c_k||^2)` against a fixed
/// set of centers.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfFeatureMap {
    pub gamma: f64,
    centers: Vec<Vec<f64>>,
}

impl RbfFeatureMap {
    /// Picks `k` distinct rows of `ds` as centers (all rows if `k >= n`).
    pub fn sample_centers(ds: &SparseDataset, k: usize, gamma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = k.min(ds.len());
        let mut picks = sample(&mut rng, ds.len(), k).into_vec();
        picks.sort_unstable();
        let centers = picks.iter().map(|&i| ds.row(i).to_dense(ds.dim())).collect();
        Self { gamma, centers }
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self {
            gamma,
            centers: self.centers.clone(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.centers.len()
    }

    pub fn transform_row(&self, x: &SparseVector) -> SparseVector {
        let x_sq = x.norm_sq();
        let feats: Vec<f64> = self
            .centers
            .iter()
            .map(|c| {
                let c_sq: f64 = c.iter().map(|v| v * v).sum();
                let dist_sq = (x_sq - 2.0 * x.dot(c) + c_sq).max(0.0);
                (-self.gamma * dist_sq).exp()
            })
            .collect();
        SparseVector::from_dense(&feats)
    }

    pub fn transform(&self, ds: &SparseDataset) -> Result<SparseDataset> {
        for c in &self.centers {
            if c.len() > ds.dim() {
                return Err(Error::DimensionMismatch {
                    expected: ds.dim(),
                    got: c.len(),
                });
            }
        }
        let rows = ds.rows().iter().map(|r| self.transform_row(r)).collect();
        SparseDataset::new(self.n_features(), rows, ds.labels().to_vec())
    }
}
