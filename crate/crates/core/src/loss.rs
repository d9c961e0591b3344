//! Logistic and squared-hinge losses and the L2-regularized empirical risk
//!
//! ```text
//! P(beta) = (1/n) sum_i loss(y_i, x_i^T beta) + (lambda/2) ||beta||^2
//! ```

use std::fmt;
use std::str::FromStr;

use crate::data::Instances;
use crate::error::{Error, Result};
use crate::sparse::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Logistic,
    L2Hinge,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Logistic => "logistic",
            LossKind::L2Hinge => "l2hinge",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" => Ok(LossKind::Logistic),
            "l2hinge" | "l2-hinge" | "squared-hinge" => Ok(LossKind::L2Hinge),
            other => Err(Error::InvalidParameter(format!("unknown loss {other:?}"))),
        }
    }
}

/// Numerically stable logistic sigmoid.
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn loss_value(kind: LossKind, y: f64, score: f64) -> f64 {
    let margin = y * score;
    match kind {
        // log(1 + exp(-z)) = max(0, -z) + log1p(exp(-|z|))
        LossKind::Logistic => (-margin).max(0.0) + (-margin.abs()).exp().ln_1p(),
        LossKind::L2Hinge => {
            let slack = (1.0 - margin).max(0.0);
            slack * slack
        }
    }
}

pub fn dloss_dscore(kind: LossKind, y: f64, score: f64) -> f64 {
    let margin = y * score;
    match kind {
        LossKind::Logistic => -y * sigmoid(-margin),
        LossKind::L2Hinge => -2.0 * y * (1.0 - margin).max(0.0),
    }
}

/// Gradient of one instance's loss with respect to `beta`, as a dense vector.
pub fn grad_instance(kind: LossKind, x: &SparseVector, y: f64, beta: &[f64]) -> Result<Vec<f64>> {
    x.check_dim(beta.len())?;
    let mut out = vec![0.0; beta.len()];
    let coef = dloss_dscore(kind, y, x.dot(beta));
    x.axpy_into(coef, &mut out);
    Ok(out)
}

fn check(data: &impl Instances, beta: &[f64], lambda: f64) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    if beta.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: beta.len(),
        });
    }
    Ok(())
}

pub fn objective(data: &impl Instances, beta: &[f64], lambda: f64, kind: LossKind) -> Result<f64> {
    check(data, beta, lambda)?;
    let n = data.len();
    let mut loss_sum = 0.0;
    for i in 0..n {
        loss_sum += loss_value(kind, data.label(i), data.row(i).dot(beta));
    }
    let beta_sq: f64 = beta.iter().map(|b| b * b).sum();
    Ok(loss_sum * (1.0 / n as f64) + 0.5 * lambda * beta_sq)
}

pub fn objective_gradient(
    data: &impl Instances,
    beta: &[f64],
    lambda: f64,
    kind: LossKind,
) -> Result<Vec<f64>> {
    objective_and_gradient(data, beta, lambda, kind).map(|(_, g)| g)
}

/// Objective value and gradient from a single pass over the rows, accumulated
/// in ascending row order.
pub fn objective_and_gradient(
    data: &impl Instances,
    beta: &[f64],
    lambda: f64,
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    check(data, beta, lambda)?;
    let n = data.len();
    let inv_n = 1.0 / n as f64;
    let mut grad = vec![0.0; beta.len()];
    let mut loss_sum = 0.0;
    for i in 0..n {
        let x = data.row(i);
        let y = data.label(i);
        let score = x.dot(beta);
        loss_sum += loss_value(kind, y, score);
        let coef = dloss_dscore(kind, y, score);
        if coef != 0.0 {
            x.axpy_into(coef, &mut grad);
        }
    }
    for (g, &b) in grad.iter_mut().zip(beta) {
        *g = *g * inv_n + lambda * b;
    }
    let beta_sq: f64 = beta.iter().map(|b| b * b).sum();
    Ok((loss_sum * inv_n + 0.5 * lambda * beta_sq, grad))
}
