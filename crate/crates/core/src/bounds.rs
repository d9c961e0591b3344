//! Certified regions for the retrained optimum and the score bounds derived
//! from them.
//!
//! Two balls are available. The old-optimum ball needs only the previous
//! optimum and the gradients of the modified instances, so it costs
//! `O((n_A + n_R) d)` regardless of the training set size. The gradient ball
//! is valid around any iterate of the new problem once its exact gradient is
//! known, and shrinks to a point as the iterate converges.
//!
//! Every linear score `eta^T beta_new` is then bracketed by
//! `eta^T m -/+ ||eta|| r`.

use crate::error::{Error, Result};
use crate::loss::dloss_dscore;
use crate::solver::TrainedModel;
use crate::sparse::{dot, norm, SparseVector};

/// Largest residual of the old model for which the old-optimum ball is
/// treated as valid.
pub const RESIDUAL_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStats {
    pub n_old: usize,
    pub n_new: usize,
    pub n_added: usize,
    pub n_removed: usize,
    /// Averaged gradient difference of the modified instances at the old
    /// optimum; zero for an empty update.
    pub delta_s: Vec<f64>,
    /// The old model's residual exceeded [`RESIDUAL_GUARD`].
    pub residual_warning: bool,
}

impl UpdateStats {
    pub fn n_modified(&self) -> usize {
        self.n_added + self.n_removed
    }
}

/// Averaged difference of per-instance loss gradients at the old optimum,
/// added minus removed.
pub fn compute_delta_s<'a, A, R>(old: &TrainedModel, added: A, removed: R) -> Result<UpdateStats>
where
    A: IntoIterator<Item = (&'a SparseVector, f64)>,
    R: IntoIterator<Item = (&'a SparseVector, f64)>,
{
    let beta = &old.beta;
    let mut acc = vec![0.0; beta.len()];
    let mut n_added = 0;
    for (x, y) in added {
        x.check_dim(beta.len())?;
        x.axpy_into(dloss_dscore(old.kind, y, x.dot(beta)), &mut acc);
        n_added += 1;
    }
    let mut n_removed = 0;
    for (x, y) in removed {
        x.check_dim(beta.len())?;
        x.axpy_into(-dloss_dscore(old.kind, y, x.dot(beta)), &mut acc);
        n_removed += 1;
    }
    if n_removed > old.n_train {
        return Err(Error::InvalidParameter(format!(
            "removing {n_removed} of {} training instances",
            old.n_train
        )));
    }
    let n_modified = n_added + n_removed;
    if n_modified > 0 {
        let scale = 1.0 / n_modified as f64;
        acc.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(UpdateStats {
        n_old: old.n_train,
        n_new: old.n_train + n_added - n_removed,
        n_added,
        n_removed,
        delta_s: acc,
        residual_warning: old.grad_residual > RESIDUAL_GUARD,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BallKind {
    /// Built from the previous optimum and the modified instances.
    OldOptimum,
    /// Built from an iterate of the updated problem and its gradient.
    GradientIterate,
}

/// `{ beta : ||beta - center|| <= radius }`, certified to contain the
/// optimum of the updated problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionBall {
    pub center: Vec<f64>,
    pub radius: f64,
    pub kind: BallKind,
}

/// Ball around the updated optimum from the old optimum alone.
pub fn old_optimum_ball(old: &TrainedModel, stats: &UpdateStats) -> Result<SolutionBall> {
    if stats.n_new == 0 {
        return Err(Error::InvalidParameter("updated dataset is empty".into()));
    }
    if !(old.lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {}", old.lambda)));
    }
    if stats.delta_s.len() != old.dim() {
        return Err(Error::DimensionMismatch {
            expected: old.dim(),
            got: stats.delta_s.len(),
        });
    }
    let n_new = stats.n_new as f64;
    let inv_lambda = 1.0 / old.lambda;
    let keep = (stats.n_old + stats.n_new) as f64 / (2.0 * n_new);
    let shift = inv_lambda * stats.n_modified() as f64 / n_new;
    let net = (stats.n_added as f64 - stats.n_removed as f64) / n_new;

    let mut center = Vec::with_capacity(old.dim());
    let mut offset_sq = 0.0;
    for (&b, &s) in old.beta.iter().zip(&stats.delta_s) {
        center.push(keep * b - 0.5 * shift * s);
        let o = net * b + shift * s;
        offset_sq += o * o;
    }
    Ok(SolutionBall {
        center,
        radius: 0.5 * offset_sq.sqrt(),
        kind: BallKind::OldOptimum,
    })
}

/// Ball around the updated optimum from any candidate and the exact gradient
/// of the updated objective there.
pub fn gradient_ball(candidate: &[f64], gradient: &[f64], lambda: f64) -> Result<SolutionBall> {
    if candidate.len() != gradient.len() {
        return Err(Error::DimensionMismatch {
            expected: candidate.len(),
            got: gradient.len(),
        });
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let half = 0.5 / lambda;
    let center = candidate
        .iter()
        .zip(gradient)
        .map(|(b, g)| b - half * g)
        .collect();
    Ok(SolutionBall {
        center,
        radius: half * norm(gradient),
        kind: BallKind::GradientIterate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMethod {
    OldOptimumBall,
    GradientBall,
    NaiveBox,
}

impl From<BallKind> for BoundMethod {
    fn from(kind: BallKind) -> Self {
        match kind {
            BallKind::OldOptimum => BoundMethod::OldOptimumBall,
            BallKind::GradientIterate => BoundMethod::GradientBall,
        }
    }
}

/// Interval `[center - half_width, center + half_width]` on a linear score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBounds {
    pub center: f64,
    pub half_width: f64,
    pub eta_norm: f64,
    pub method: BoundMethod,
}

impl ScoreBounds {
    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }

    pub fn width(&self) -> f64 {
        2.0 * self.half_width
    }

    pub fn contains(&self, value: f64, slack: f64) -> bool {
        self.lower() - slack <= value && value <= self.upper() + slack
    }

    pub fn decide(self) -> LabelDecision {
        let label = if self.lower() > 0.0 {
            Label::Plus
        } else if self.upper() < 0.0 {
            Label::Minus
        } else {
            Label::Unknown
        };
        LabelDecision { label, bounds: self }
    }
}

/// Coefficient interval; every coefficient of one ball shares `half_width`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub center: f64,
    pub half_width: f64,
}

impl Interval {
    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }

    pub fn width(&self) -> f64 {
        2.0 * self.half_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Plus,
    Minus,
    Unknown,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Plus => "+1",
            Label::Minus => "-1",
            Label::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelDecision {
    pub label: Label,
    pub bounds: ScoreBounds,
}

impl SolutionBall {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn score_bounds(&self, eta: &[f64]) -> Result<ScoreBounds> {
        if eta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: eta.len(),
            });
        }
        let eta_norm = norm(eta);
        Ok(self.bounds_from(dot(eta, &self.center), eta_norm))
    }

    /// Same as [`score_bounds`](Self::score_bounds), touching only the
    /// nonzeros of `eta`.
    pub fn score_bounds_sparse(&self, eta: &SparseVector) -> Result<ScoreBounds> {
        eta.check_dim(self.dim())?;
        Ok(self.bounds_from(eta.dot(&self.center), eta.norm()))
    }

    fn bounds_from(&self, projection: f64, eta_norm: f64) -> ScoreBounds {
        ScoreBounds {
            center: projection,
            half_width: eta_norm * self.radius,
            eta_norm,
            method: self.kind.into(),
        }
    }

    pub fn coefficient_bounds(&self) -> Vec<Interval> {
        self.center
            .iter()
            .map(|&c| Interval {
                center: c,
                half_width: self.radius,
            })
            .collect()
    }

    /// Plus if the lower bound of `x^T beta_new` is positive, Minus if the
    /// upper bound is negative, Unknown otherwise.
    pub fn classify(&self, x: &SparseVector) -> Result<LabelDecision> {
        Ok(self.score_bounds_sparse(x)?.decide())
    }

    pub fn contains(&self, beta: &[f64], slack: f64) -> bool {
        crate::sparse::distance(beta, &self.center) <= self.radius + slack
    }
}

/// Upper bound on `||beta_new - beta_old||_q` implied by coefficient
/// intervals. `q = f64::INFINITY` gives the max norm.
pub fn norm_change_bound(old_beta: &[f64], coef_bounds: &[Interval], q: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::InvalidParameter(format!("q must be positive, got {q}")));
    }
    if old_beta.len() != coef_bounds.len() {
        return Err(Error::DimensionMismatch {
            expected: old_beta.len(),
            got: coef_bounds.len(),
        });
    }
    let reach = old_beta
        .iter()
        .zip(coef_bounds)
        .map(|(&b, iv)| (b - iv.lower()).max(iv.upper() - b));
    if q.is_infinite() {
        return Ok(reach.fold(0.0, f64::max));
    }
    if q == 1.0 {
        return Ok(reach.sum());
    }
    Ok(reach.map(|t| t.powf(q)).sum::<f64>().powf(1.0 / q))
}

/// Score bounds from the coefficient box alone, ignoring that the optimum
/// lies in a ball. Never tighter than the ball bounds.
pub fn naive_score_bounds(coef_bounds: &[Interval], eta: &[f64]) -> Result<ScoreBounds> {
    if eta.len() != coef_bounds.len() {
        return Err(Error::DimensionMismatch {
            expected: coef_bounds.len(),
            got: eta.len(),
        });
    }
    let mut center = 0.0;
    let mut half_width = 0.0;
    for (&e, iv) in eta.iter().zip(coef_bounds) {
        center += e * iv.center;
        half_width += e.abs() * iv.half_width;
    }
    Ok(ScoreBounds {
        center,
        half_width,
        eta_norm: norm(eta),
        method: BoundMethod::NaiveBox,
    })
}

/// Bounds on `y_h x_h^T beta` for the model trained without instance `h`,
/// using the closed form specialised to a single removal.
pub fn loocv_fold_bounds(full: &TrainedModel, x: &SparseVector, y: f64) -> Result<ScoreBounds> {
    let n = full.n_train;
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "leave-one-out needs at least 2 instances, got {n}"
        )));
    }
    x.check_dim(full.dim())?;
    let n = n as f64;
    let inv_lambda = 1.0 / full.lambda;
    let score = x.dot(&full.beta);
    // grad_h = c * x_h
    let c = dloss_dscore(full.kind, y, score);
    let x_sq = x.norm_sq();
    let center = (2.0 * n - 1.0) / (2.0 * n - 2.0) * y * score
        + inv_lambda / (2.0 * n - 2.0) * y * c * x_sq;
    // || -beta/(n-1) - (c/lambda)/(n-1) x ||^2 expanded over the support of x
    let beta_sq: f64 = full.beta.iter().map(|b| b * b).sum();
    let a = -1.0 / (n - 1.0);
    let b = -inv_lambda * c / (n - 1.0);
    let offset_sq = (a * a * beta_sq + 2.0 * a * b * score + b * b * x_sq).max(0.0);
    let x_norm = x_sq.sqrt();
    Ok(ScoreBounds {
        center,
        half_width: 0.5 * x_norm * offset_sq.sqrt(),
        eta_norm: x_norm,
        method: BoundMethod::OldOptimumBall,
    })
}
