//! Leave-one-out cross-validation where most folds are settled by score
//! bounds instead of retraining.
//!
//! For fold `h` the old-optimum ball for removing instance `h` bounds the
//! held-out margin `y_h x_h^T beta_(-h)`. A positive lower bound proves the
//! fold correct, a negative upper bound proves it wrong. Remaining folds fall
//! back to a warm-started solve ([`LoocvMode::Op1`]), or to a solve that stops
//! as soon as the gradient-ball bounds on the margin agree in sign
//! ([`LoocvMode::Op2`]).

use std::time::Instant;

use rayon::prelude::*;

use crate::bounds::{gradient_ball, loocv_fold_bounds, Label, ScoreBounds};
use crate::data::{LeaveOneOut, RbfFeatureMap, SparseDataset};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::solver::{incremental_train, train, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoocvMode {
    /// Bound check, then a full warm-started solve for undecided folds.
    Op1,
    /// Bound check, then a warm-started solve cut short once gradient-ball
    /// bounds decide the label.
    Op2,
    /// Solve every fold.
    Exact,
}

impl std::str::FromStr for LoocvMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "op1" => Ok(LoocvMode::Op1),
            "op2" => Ok(LoocvMode::Op2),
            "exact" => Ok(LoocvMode::Exact),
            other => Err(Error::InvalidParameter(format!("unknown LOOCV mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoocvOptions {
    pub mode: LoocvMode,
    /// Resolve undecided folds in increasing order of their margin under the
    /// full model.
    pub order_trick: bool,
    /// Tolerance for the model trained on all instances.
    pub full_tol: f64,
    /// Tolerance for fallback fold solves.
    pub fold_tol: f64,
    /// Evaluate folds on the rayon pool. Ignored while pruning is active.
    pub parallel: bool,
}

impl Default for LoocvOptions {
    fn default() -> Self {
        Self {
            mode: LoocvMode::Op1,
            order_trick: false,
            full_tol: 1e-10,
            fold_tol: 1e-8,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldDecision {
    CorrectByBound,
    WrongByBound,
    ResolvedBySolve { correct: bool },
    ResolvedByEarlyStop { correct: bool },
    /// Not evaluated because the model was pruned.
    Pending,
}

impl FoldDecision {
    pub fn is_resolved_by_solve(self) -> bool {
        matches!(
            self,
            FoldDecision::ResolvedBySolve { .. } | FoldDecision::ResolvedByEarlyStop { .. }
        )
    }

    /// `None` while pending.
    pub fn correct(self) -> Option<bool> {
        match self {
            FoldDecision::CorrectByBound => Some(true),
            FoldDecision::WrongByBound => Some(false),
            FoldDecision::ResolvedBySolve { correct }
            | FoldDecision::ResolvedByEarlyStop { correct } => Some(correct),
            FoldDecision::Pending => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub index: usize,
    pub decision: FoldDecision,
    /// Old-optimum bounds on `y_h x_h^T beta_(-h)`; absent in exact mode.
    pub bounds: Option<ScoreBounds>,
    /// Held-out margin at the final fallback iterate, if a solve ran.
    pub margin: Option<f64>,
    pub solver_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoocvResult {
    /// Misclassification rate over folds; equals `error_lower` when pruned.
    pub error_rate: f64,
    pub error_lower: f64,
    pub error_upper: f64,
    pub fold_outcomes: Vec<FoldOutcome>,
    pub solves_performed: usize,
    pub inner_iterations: usize,
    /// Folds undecided by the bound check (all folds in exact mode).
    pub unknown_after_bounds: usize,
    pub pruned: bool,
    pub bound_time: f64,
    pub solve_time: f64,
    pub wall_time: f64,
}

/// Trains on all of `ds` and runs leave-one-out.
pub fn run_loocv(
    ds: &SparseDataset,
    lambda: f64,
    kind: LossKind,
    opts: &LoocvOptions,
) -> Result<LoocvResult> {
    let start = Instant::now();
    let (full, _) = train(ds, lambda, kind, opts.full_tol, None)?;
    let mut result = run_loocv_with_model(ds, &full, opts, |_, _| false)?;
    result.wall_time = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Leave-one-out around an already trained full model. `abort(lower, upper)`
/// is consulted after the bound phase and after every fallback solve; once it
/// returns `true` the run stops and is marked pruned. With `opts.parallel`
/// the fallback solves run as one batch and `abort` is only consulted before
/// and after it.
pub fn run_loocv_with_model<F>(
    ds: &SparseDataset,
    full: &TrainedModel,
    opts: &LoocvOptions,
    mut abort: F,
) -> Result<LoocvResult>
where
    F: FnMut(f64, f64) -> bool,
{
    let n = ds.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "leave-one-out needs at least 2 instances, got {n}"
        )));
    }
    if full.n_train != n || full.dim() != ds.dim() {
        return Err(Error::InvalidParameter(
            "full model was not trained on this dataset".into(),
        ));
    }
    let start = Instant::now();

    let bound_fold = |h: usize| -> Result<FoldOutcome> {
        let (decision, bounds) = match opts.mode {
            LoocvMode::Exact => (FoldDecision::Pending, None),
            LoocvMode::Op1 | LoocvMode::Op2 => {
                let b = loocv_fold_bounds(full, ds.row(h), ds.label(h))
                    .map_err(|e| fold_error(h, e))?;
                let decision = match b.decide().label {
                    Label::Plus => FoldDecision::CorrectByBound,
                    Label::Minus => FoldDecision::WrongByBound,
                    Label::Unknown => FoldDecision::Pending,
                };
                (decision, Some(b))
            }
        };
        Ok(FoldOutcome {
            index: h,
            decision,
            bounds,
            margin: None,
            solver_iterations: 0,
        })
    };
    let mut outcomes: Vec<FoldOutcome> = if opts.parallel {
        (0..n).into_par_iter().map(bound_fold).collect::<Result<_>>()?
    } else {
        (0..n).map(bound_fold).collect::<Result<_>>()?
    };
    let bound_time = start.elapsed().as_secs_f64();

    let mut pending: Vec<usize> = outcomes
        .iter()
        .filter(|o| o.decision == FoldDecision::Pending)
        .map(|o| o.index)
        .collect();
    if opts.order_trick {
        let margin = |h: usize| ds.label(h) * ds.row(h).dot(&full.beta);
        pending.sort_by(|&a, &b| margin(a).total_cmp(&margin(b)).then(a.cmp(&b)));
    }
    let unknown_after_bounds = pending.len();

    let mut tally = Tally::new(&outcomes);
    let solve_start = Instant::now();
    let mut pruned = abort(tally.lower(n), tally.upper(n));
    if !pruned {
        if opts.parallel {
            let solved: Vec<FoldOutcome> = pending
                .par_iter()
                .map(|&h| solve_fold(ds, full, h, opts))
                .collect::<Result<_>>()?;
            for o in solved {
                tally.record(o.decision);
                let idx = o.index;
                outcomes[idx] = o;
            }
            pruned = abort(tally.lower(n), tally.upper(n));
        } else {
            for &h in &pending {
                let o = solve_fold(ds, full, h, opts)?;
                tally.record(o.decision);
                outcomes[h] = o;
                if abort(tally.lower(n), tally.upper(n)) {
                    pruned = true;
                    break;
                }
            }
        }
    }
    let solve_time = solve_start.elapsed().as_secs_f64();

    let solves_performed = outcomes
        .iter()
        .filter(|o| o.decision.is_resolved_by_solve())
        .count();
    let inner_iterations = outcomes.iter().map(|o| o.solver_iterations).sum();
    let error_lower = tally.lower(n);
    let error_upper = tally.upper(n);
    let complete = tally.pending == 0;
    Ok(LoocvResult {
        error_rate: error_lower,
        error_lower,
        error_upper,
        fold_outcomes: outcomes,
        solves_performed,
        inner_iterations,
        unknown_after_bounds,
        pruned: pruned && !complete,
        bound_time,
        solve_time,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

struct Tally {
    wrong: usize,
    pending: usize,
}

impl Tally {
    fn new(outcomes: &[FoldOutcome]) -> Self {
        let mut t = Self { wrong: 0, pending: 0 };
        for o in outcomes {
            match o.decision.correct() {
                Some(false) => t.wrong += 1,
                Some(true) => {}
                None => t.pending += 1,
            }
        }
        t
    }

    fn record(&mut self, decision: FoldDecision) {
        self.pending -= 1;
        if decision.correct() == Some(false) {
            self.wrong += 1;
        }
    }

    fn lower(&self, n: usize) -> f64 {
        self.wrong as f64 / n as f64
    }

    fn upper(&self, n: usize) -> f64 {
        (self.wrong + self.pending) as f64 / n as f64
    }
}

fn fold_error(fold: usize, e: Error) -> Error {
    Error::Fold {
        fold,
        source: Box::new(e),
    }
}

fn solve_fold(
    ds: &SparseDataset,
    full: &TrainedModel,
    h: usize,
    opts: &LoocvOptions,
) -> Result<FoldOutcome> {
    let view = LeaveOneOut::new(ds, h)?;
    let x = ds.row(h);
    let y = ds.label(h);
    let bounds = match opts.mode {
        LoocvMode::Exact => None,
        _ => Some(loocv_fold_bounds(full, x, y).map_err(|e| fold_error(h, e))?),
    };
    let mut early: Option<bool> = None;
    let (model, report) = match opts.mode {
        LoocvMode::Op2 => incremental_train(full, &view, opts.fold_tol, |beta, grad| {
            let Ok(ball) = gradient_ball(beta, grad, full.lambda) else {
                return false;
            };
            let Ok(b) = ball.score_bounds_sparse(x) else {
                return false;
            };
            // bounds on y x^T beta from bounds on x^T beta
            let (lo, hi) = if y > 0.0 {
                (b.lower(), b.upper())
            } else {
                (-b.upper(), -b.lower())
            };
            if lo > 0.0 {
                early = Some(true);
            } else if hi < 0.0 {
                early = Some(false);
            }
            early.is_some()
        }),
        LoocvMode::Op1 | LoocvMode::Exact => {
            incremental_train(full, &view, opts.fold_tol, |_, _| false)
        }
    }
    .map_err(|e| fold_error(h, e))?;
    let margin = y * x.dot(&model.beta);
    let decision = match (report.stopped_early, early) {
        (true, Some(correct)) => FoldDecision::ResolvedByEarlyStop { correct },
        _ => FoldDecision::ResolvedBySolve {
            correct: margin > 0.0,
        },
    };
    Ok(FoldOutcome {
        index: h,
        decision,
        bounds,
        margin: Some(margin),
        solver_iterations: report.iterations,
    })
}

/// `[2^lo, 2^(lo+1), ..., 2^hi]`
pub fn power_of_two_grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 2f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub lambda: f64,
    pub features: Option<RbfFeatureMap>,
}

impl GridCell {
    pub fn linear(lambda: f64) -> Self {
        Self {
            lambda,
            features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: GridCell,
    pub result: LoocvResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSelection {
    /// Index into `cells` of the selected model.
    pub best: usize,
    pub cells: Vec<CellResult>,
}

impl ModelSelection {
    pub fn best_cell(&self) -> &CellResult {
        &self.cells[self.best]
    }

    pub fn total_inner_iterations(&self) -> usize {
        self.cells.iter().map(|c| c.result.inner_iterations).sum()
    }
}

/// Picks the grid cell with the smallest leave-one-out error; ties go to the
/// earliest cell. With `prune`, a cell is abandoned as soon as its error lower
/// bound exceeds the best completed error so far.
pub fn model_select(
    ds: &SparseDataset,
    grid: &[GridCell],
    kind: LossKind,
    opts: &LoocvOptions,
    prune: bool,
) -> Result<ModelSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty model-selection grid".into()));
    }
    let mut cells = Vec::with_capacity(grid.len());
    let mut incumbent: Option<(usize, f64)> = None;
    for (i, cell) in grid.iter().enumerate() {
        let mapped;
        let data = match &cell.features {
            Some(map) => {
                mapped = map.transform(ds)?;
                &mapped
            }
            None => ds,
        };
        let start = Instant::now();
        let (full, _) = train(data, cell.lambda, kind, opts.full_tol, None)?;
        let best_so_far = incumbent.map(|(_, e)| e);
        let cell_opts = LoocvOptions {
            parallel: opts.parallel && !prune,
            ..*opts
        };
        let mut result = run_loocv_with_model(data, &full, &cell_opts, |lower, _| {
            prune && best_so_far.is_some_and(|best| lower > best)
        })?;
        result.wall_time = start.elapsed().as_secs_f64();
        if !result.pruned && incumbent.map_or(true, |(_, e)| result.error_rate < e) {
            incumbent = Some((i, result.error_rate));
        }
        cells.push(CellResult {
            cell: cell.clone(),
            result,
        });
    }
    let (best, _) = incumbent.expect("first cell is never pruned");
    Ok(ModelSelection { best, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{compute_delta_s, old_optimum_ball};
    use crate::data::{make_synthetic, parse_libsvm};
    use crate::solver::train;

    #[test]
    fn specialised_fold_bounds_match_general_path() {
        let ds = make_synthetic(1, 60, 5, 1.0).unwrap();
        for kind in [LossKind::Logistic, LossKind::L2Hinge] {
            let (full, _) = train(&ds, 0.1, kind, 1e-10, None).unwrap();
            for h in 0..ds.len() {
                let x = ds.row(h);
                let y = ds.label(h);
                let fast = loocv_fold_bounds(&full, x, y).unwrap();
                let stats = compute_delta_s(&full, [], [(x, y)]).unwrap();
                let ball = old_optimum_ball(&full, &stats).unwrap();
                let general = ball.score_bounds_sparse(&x.scaled(y)).unwrap();
                let tol = 1e-12 * (1.0 + general.center.abs() + general.half_width);
                assert!((fast.lower() - general.lower()).abs() <= tol);
                assert!((fast.upper() - general.upper()).abs() <= tol);
            }
        }
    }

    #[test]
    fn two_point_problem_contains_exact_margin() {
        let ds = parse_libsvm(b"+1 1:1\n-1 1:-0.5\n", None).unwrap();
        let (full, _) = train(&ds, 0.3, LossKind::Logistic, 1e-13, None).unwrap();
        for h in 0..2 {
            let b = loocv_fold_bounds(&full, ds.row(h), ds.label(h)).unwrap();
            let view = LeaveOneOut::new(&ds, h).unwrap();
            let (m, _) = train(&view, 0.3, LossKind::Logistic, 1e-13, None).unwrap();
            let margin = ds.label(h) * ds.row(h).dot(&m.beta);
            assert!(b.contains(margin, 1e-10), "{b:?} vs {margin}");
        }
    }

    #[test]
    fn modes_agree_and_intervals_hold() {
        let ds = make_synthetic(4, 80, 4, 1.0).unwrap();
        for kind in [LossKind::Logistic, LossKind::L2Hinge] {
            let mut rates = Vec::new();
            for mode in [LoocvMode::Exact, LoocvMode::Op1, LoocvMode::Op2] {
                let opts = LoocvOptions {
                    mode,
                    ..LoocvOptions::default()
                };
                let r = run_loocv(&ds, 0.05, kind, &opts).unwrap();
                assert!(r.error_lower <= r.error_rate && r.error_rate <= r.error_upper);
                assert_eq!(r.error_lower, r.error_upper);
                assert!(!r.pruned);
                let resolved = r
                    .fold_outcomes
                    .iter()
                    .filter(|o| o.decision.is_resolved_by_solve())
                    .count();
                assert_eq!(r.solves_performed, resolved);
                assert_eq!(r.solves_performed, r.unknown_after_bounds);
                rates.push(r.error_rate);
            }
            assert_eq!(rates[0], rates[1]);
            assert_eq!(rates[1], rates[2]);
        }
    }

    #[test]
    fn interval_before_fallback() {
        let ds = make_synthetic(5, 60, 3, 0.5).unwrap();
        let (full, _) = train(&ds, 0.05, LossKind::Logistic, 1e-10, None).unwrap();
        let opts = LoocvOptions::default();
        let mut seen = None;
        run_loocv_with_model(&ds, &full, &opts, |lo, hi| {
            if seen.is_none() {
                seen = Some((lo, hi));
            }
            false
        })
        .unwrap();
        let r = run_loocv_with_model(&ds, &full, &opts, |_, _| true).unwrap();
        let (lo, hi) = seen.unwrap();
        assert_eq!((r.error_lower, r.error_upper), (lo, hi));
        let width = hi - lo;
        assert!((width - r.unknown_after_bounds as f64 / 60.0).abs() < 1e-15);
        assert_eq!(r.pruned, r.unknown_after_bounds > 0);
        assert_eq!(r.solves_performed, 0);
    }

    #[test]
    fn order_trick_and_parallel_do_not_change_results() {
        let ds = make_synthetic(6, 70, 3, 1.0).unwrap();
        let base = run_loocv(&ds, 0.1, LossKind::L2Hinge, &LoocvOptions::default()).unwrap();
        for (order_trick, parallel) in [(true, false), (false, true), (true, true)] {
            let opts = LoocvOptions {
                order_trick,
                parallel,
                ..LoocvOptions::default()
            };
            let r = run_loocv(&ds, 0.1, LossKind::L2Hinge, &opts).unwrap();
            assert_eq!(r.error_rate, base.error_rate);
            assert_eq!(r.fold_outcomes, base.fold_outcomes);
        }
    }

    #[test]
    fn rejects_tiny_datasets() {
        let ds = parse_libsvm(b"+1 1:1\n", None).unwrap();
        assert!(run_loocv(&ds, 0.1, LossKind::Logistic, &LoocvOptions::default()).is_err());
    }

    #[test]
    fn singleton_grid() {
        let ds = make_synthetic(7, 40, 3, 1.0).unwrap();
        let sel = model_select(
            &ds,
            &[GridCell::linear(0.1)],
            LossKind::Logistic,
            &LoocvOptions::default(),
            true,
        )
        .unwrap();
        assert_eq!(sel.best, 0);
        assert!(model_select(&ds, &[], LossKind::Logistic, &LoocvOptions::default(), true).is_err());
    }

    #[test]
    fn grid_arithmetic() {
        let g = power_of_two_grid(-20, 0);
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 2f64.powi(-20));
        assert_eq!(g[20], 1.0);
    }

    #[test]
    fn mode_names() {
        assert_eq!("op2".parse::<LoocvMode>().unwrap(), LoocvMode::Op2);
        assert!("fast".parse::<LoocvMode>().is_err());
    }
}
