//! Full-batch limited-memory quasi-Newton solver for the regularized
//! empirical risk, with warm starts and a per-iteration stopping hook.

use std::collections::VecDeque;
use std::time::Instant;

use crate::data::Instances;
use crate::error::{Error, Result};
use crate::loss::{objective_and_gradient, LossKind};
use crate::sparse::{dot, norm};

/// Gradient-norm tolerance for optima that feed the old-optimum ball.
pub const EXACT_TOL: f64 = 1e-8;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iterations: usize,
    pub history: usize,
    pub armijo_c: f64,
    pub shrink: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iterations: MAX_ITERATIONS,
            history: 10,
            armijo_c: 1e-4,
            shrink: 0.5,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub kind: LossKind,
    /// Euclidean norm of the objective gradient at `beta`.
    pub grad_residual: f64,
    pub n_train: usize,
}

impl TrainedModel {
    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn decision_value(&self, x: &crate::sparse::SparseVector) -> f64 {
        x.dot(&self.beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub final_objective: f64,
    pub stopped_early: bool,
    /// Seconds.
    pub wall_time: f64,
}

/// Solves to `tol`, optionally warm-starting from `init`.
pub fn train(
    data: &impl Instances,
    lambda: f64,
    kind: LossKind,
    tol: f64,
    init: Option<&[f64]>,
) -> Result<(TrainedModel, SolveReport)> {
    train_with(data, lambda, kind, &SolverOptions::with_tol(tol), init, |_, _| false)
}

/// Warm-starts from `old.beta` on the updated data and runs until the gradient
/// norm reaches `tol` or `stop_hook(beta, gradient)` returns `true`.
pub fn incremental_train<F>(
    old: &TrainedModel,
    data: &impl Instances,
    tol: f64,
    stop_hook: F,
) -> Result<(TrainedModel, SolveReport)>
where
    F: FnMut(&[f64], &[f64]) -> bool,
{
    if data.dim() != old.dim() {
        return Err(Error::DimensionMismatch {
            expected: old.dim(),
            got: data.dim(),
        });
    }
    train_with(
        data,
        old.lambda,
        old.kind,
        &SolverOptions::with_tol(tol),
        Some(&old.beta),
        stop_hook,
    )
}

/// The general entry point. `hook` sees every iterate (including the starting
/// point) together with its exact objective gradient, once per outer
/// iteration, after the convergence test.
pub fn train_with<F>(
    data: &impl Instances,
    lambda: f64,
    kind: LossKind,
    opts: &SolverOptions,
    init: Option<&[f64]>,
    mut hook: F,
) -> Result<(TrainedModel, SolveReport)>
where
    F: FnMut(&[f64], &[f64]) -> bool,
{
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let start = Instant::now();
    let d = data.dim();
    let mut x = match init {
        Some(b) if b.len() != d => {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: b.len(),
            })
        }
        Some(b) => b.to_vec(),
        None => vec![0.0; d],
    };
    let (mut f, mut g) = objective_and_gradient(data, &x, lambda, kind)?;
    let mut memory: VecDeque<Pair> = VecDeque::with_capacity(opts.history);
    let mut iterations = 0;
    let mut stopped_early = false;

    loop {
        let g_norm = norm(&g);
        if g_norm <= opts.tol {
            break;
        }
        if hook(&x, &g) {
            stopped_early = true;
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(Error::IterationCap {
                iterations,
                residual: g_norm,
                best: x,
            });
        }

        let mut p = two_loop_direction(&g, &memory);
        let mut slope = dot(&g, &p);
        if !(slope < 0.0) {
            memory.clear();
            p = g.iter().map(|v| -v).collect();
            slope = -g_norm * g_norm;
        }
        let mut step = if memory.is_empty() { (1.0 / g_norm).min(1.0) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..80 {
            let x_new: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + step * pi).collect();
            let (f_new, g_new) = objective_and_gradient(data, &x_new, lambda, kind)?;
            if sufficient_decrease(f, f_new, step * slope, opts.armijo_c)
                || at_noise_floor(f, f_new, step * slope, g_norm, norm(&g_new))
            {
                accepted = Some((x_new, f_new, g_new));
                break;
            }
            step *= opts.shrink;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if !memory.is_empty() {
                // stale curvature pairs; retry along steepest descent
                memory.clear();
                continue;
            }
            return Err(Error::LineSearch {
                iterations,
                residual: g_norm,
                best: x,
            });
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y) && sy > 0.0 {
            if memory.len() == opts.history {
                memory.pop_front();
            }
            memory.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        x = x_new;
        f = f_new;
        g = g_new;
        iterations += 1;
    }

    let residual = norm(&g);
    let report = SolveReport {
        iterations,
        final_grad_norm: residual,
        final_objective: f,
        stopped_early,
        wall_time: start.elapsed().as_secs_f64(),
    };
    let model = TrainedModel {
        beta: x,
        lambda,
        kind,
        grad_residual: residual,
        n_train: data.len(),
    };
    Ok((model, report))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// `-H g` for the L-BFGS inverse-Hessian approximation `H`.
fn two_loop_direction(g: &[f64], memory: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for pair in memory.iter().rev() {
        let a = pair.rho * dot(&pair.s, &q);
        for (qi, yi) in q.iter_mut().zip(&pair.y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some(last) = memory.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for (pair, a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = pair.rho * dot(&pair.y, &q);
        for (qi, si) in q.iter_mut().zip(&pair.s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

fn sufficient_decrease(f: f64, f_new: f64, directional: f64, c: f64) -> bool {
    f_new <= f + c * directional
}

/// Once the predicted decrease drops below the resolution of the objective,
/// Armijo comparisons are rounding noise. Steps are then accepted if the
/// objective stays within a few ulps and the gradient norm shrinks.
fn at_noise_floor(f: f64, f_new: f64, directional: f64, g_norm: f64, g_new_norm: f64) -> bool {
    let scale = f.abs().max(1.0);
    directional.abs() <= 1e-11 * scale
        && f_new <= f + 8.0 * f64::EPSILON * scale
        && g_new_norm < g_norm
}

/// Plain gradient descent with the fixed step `1/L`, `L` an upper bound on
/// the objective's curvature. Slow; kept as an independent cross-check.
pub fn gradient_descent(
    data: &impl Instances,
    lambda: f64,
    kind: LossKind,
    tol: f64,
    max_iterations: usize,
) -> Result<TrainedModel> {
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let curvature = match kind {
        LossKind::Logistic => 0.25,
        LossKind::L2Hinge => 2.0,
    };
    let max_sq = (0..n).map(|i| data.row(i).norm_sq()).fold(0.0, f64::max);
    let step = 1.0 / (curvature * max_sq + lambda);
    let mut beta = vec![0.0; data.dim()];
    for _ in 0..max_iterations {
        let (_, g) = objective_and_gradient(data, &beta, lambda, kind)?;
        let g_norm = norm(&g);
        if g_norm <= tol {
            return Ok(TrainedModel {
                beta,
                lambda,
                kind,
                grad_residual: g_norm,
                n_train: n,
            });
        }
        for (b, gi) in beta.iter_mut().zip(&g) {
            *b -= step * gi;
        }
    }
    let (_, g) = objective_and_gradient(data, &beta, lambda, kind)?;
    Err(Error::IterationCap {
        iterations: max_iterations,
        residual: norm(&g),
        best: beta,
    })
}
