//! Exit criteria. Each test prints one `[PASS]`/`[FAIL]` line; run with
//! `cargo test -p delta-scope --test acceptance -- --nocapture --test-threads=1`.

mod common;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::{random_case, report, Case};
use delta_scope::loocv::{model_select, power_of_two_grid, GridCell, LoocvMode, LoocvOptions};
use delta_scope::loss::{objective, objective_gradient};
use delta_scope::sparse::norm;
use delta_scope::{
    compute_delta_s, gradient_ball, incremental_train, make_synthetic, naive_score_bounds,
    old_optimum_ball, parse_libsvm, split_for_update, train, Label, LossKind, SparseDataset,
};
use delta_scope::loocv::{run_loocv, LoocvResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SUITE_SIZE: u64 = 200;

fn suite() -> &'static (Vec<Case>, Duration) {
    static SUITE: OnceLock<(Vec<Case>, Duration)> = OnceLock::new();
    SUITE.get_or_init(|| {
        let start = Instant::now();
        let cases = (0..SUITE_SIZE).map(random_case).collect();
        (cases, start.elapsed())
    })
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

#[test]
fn sandwich_soundness() {
    let start = Instant::now();
    let (cases, build) = suite();
    let slack = 1e-7;
    let mut checked = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for case in cases {
        let stats = compute_delta_s(
            &case.old,
            case.plan.added_instances(),
            case.plan.removed_instances(&case.base),
        )
        .unwrap();
        let ball = old_optimum_ball(&case.old, &stats).unwrap();
        for eta in case.directions() {
            let b = ball.score_bounds(&eta).unwrap();
            let truth: f64 = eta.iter().zip(&case.new_opt).map(|(e, v)| e * v).sum();
            let violation = (b.lower() - truth).max(truth - b.upper());
            worst = worst.max(violation);
            if violation > slack {
                failures.push((case.seed, violation));
            }
            checked += 1;
        }
    }
    // counts the suite build even when another test paid for it
    let elapsed = *build + start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    report(
        "sandwich soundness",
        pass,
        &format!(
            "{checked} scores over {} cases, worst violation {worst:.3e} (slack {slack:e}), {:.1}s",
            cases.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(failures.is_empty(), "violations: {failures:?}");
    assert!(elapsed < Duration::from_secs(120));
}

/// Widths are compared through `ScoreBounds::width`, the interval's exact
/// `U - L`. Subtracting the rounded endpoints loses digits whenever the
/// center dwarfs the width; that figure is reported but not gated.
#[test]
fn gap_identities() {
    let (cases, _) = suite();
    let mut worst_old: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    let mut worst_endpoint: f64 = 0.0;
    for case in cases {
        let stats = compute_delta_s(
            &case.old,
            case.plan.added_instances(),
            case.plan.removed_instances(&case.base),
        )
        .unwrap();
        let ball = old_optimum_ball(&case.old, &stats).unwrap();
        let g = objective_gradient(&case.updated, &case.old.beta, case.lambda, case.kind).unwrap();
        let gball = gradient_ball(&case.old.beta, &g, case.lambda).unwrap();
        for eta in case.directions() {
            let eta_norm = norm(&eta);
            let b = ball.score_bounds(&eta).unwrap();
            worst_old = worst_old.max(rel_err(b.width(), 2.0 * eta_norm * ball.radius));
            let gb = gball.score_bounds(&eta).unwrap();
            let expected = eta_norm * norm(&g) / case.lambda;
            worst_grad = worst_grad.max(rel_err(gb.width(), expected));
            worst_endpoint = worst_endpoint.max(rel_err(gb.upper() - gb.lower(), expected));
        }
    }
    let pass = worst_old <= 1e-10 && worst_grad <= 1e-10;
    report(
        "gap identities",
        pass,
        &format!(
            "max rel. error: old-optimum {worst_old:.2e}, gradient ball {worst_grad:.2e} (tol 1e-10); \
             endpoint subtraction {worst_endpoint:.2e}"
        ),
    );
    assert!(pass);
}

#[test]
fn gradient_ball_trajectory() {
    let tol = 1e-8;
    let slack = 1e-8;
    let mut iterates = 0;
    let mut misses = Vec::new();
    let mut gap_ok = true;
    for seed in 0..50 {
        let case = random_case(10_000 + seed);
        let mut local = 0;
        let (model, _) = incremental_train(&case.old, &case.updated, tol, |beta, grad| {
            let ball = gradient_ball(beta, grad, case.lambda).unwrap();
            if !ball.contains(&case.new_opt, slack) {
                misses.push((case.seed, local));
            }
            local += 1;
            false
        })
        .unwrap();
        iterates += local;
        let g = objective_gradient(&case.updated, &model.beta, case.lambda, case.kind).unwrap();
        let ball = gradient_ball(&model.beta, &g, case.lambda).unwrap();
        assert!(ball.contains(&case.new_opt, slack));
        for eta in case.directions() {
            let b = ball.score_bounds(&eta).unwrap();
            let limit = norm(&eta) * tol / case.lambda;
            if b.width() > limit * (1.0 + 1e-12) {
                gap_ok = false;
            }
        }
    }
    let pass = misses.is_empty() && gap_ok;
    report(
        "gradient-ball trajectory",
        pass,
        &format!("50 solves, {iterates} iterates checked, {} misses, converged gap within lambda^-1 ||eta|| tol: {gap_ok}", misses.len()),
    );
    assert!(pass, "misses: {misses:?}");
}

fn run_modes(
    ds: &SparseDataset,
    lambda: f64,
    kind: LossKind,
    opts: &LoocvOptions,
    modes: [LoocvMode; 3],
) -> [LoocvResult; 3] {
    modes.map(|mode| run_loocv(ds, lambda, kind, &LoocvOptions { mode, ..*opts }).unwrap())
}

#[test]
fn loocv_exactness() {
    let start = Instant::now();
    let tie = 1e-7;
    let mut mismatches = Vec::new();
    let mut folds = 0;
    let mut excluded = 0;
    let mut decided_by_bound = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let n = rng.gen_range(50..=200);
        let d = rng.gen_range(2..=60);
        let lambda = 2f64.powi(-rng.gen_range(0..=6));
        let kind = if seed % 2 == 0 {
            LossKind::Logistic
        } else {
            LossKind::L2Hinge
        };
        let ds = make_synthetic(seed, n, d, rng.gen_range(0.5..2.5)).unwrap();
        let opts = LoocvOptions {
            full_tol: 1e-11,
            fold_tol: 1e-10,
            ..LoocvOptions::default()
        };
        let [exact, op1, op2] =
            run_modes(&ds, lambda, kind, &opts, [LoocvMode::Exact, LoocvMode::Op1, LoocvMode::Op2]);
        let mut errs = [0usize; 3];
        for h in 0..n {
            let margin = exact.fold_outcomes[h].margin.unwrap();
            folds += 1;
            if margin.abs() < tie {
                excluded += 1;
                continue;
            }
            let truth = margin > 0.0;
            for (k, r) in [&exact, &op1, &op2].into_iter().enumerate() {
                let got = r.fold_outcomes[h].decision.correct().unwrap();
                if !got {
                    errs[k] += 1;
                }
                if got != truth {
                    mismatches.push((seed, h, k));
                }
            }
            decided_by_bound += usize::from(!op1.fold_outcomes[h].decision.is_resolved_by_solve());
        }
        if excluded == 0 {
            assert_eq!(exact.error_rate, op1.error_rate);
            assert_eq!(exact.error_rate, op2.error_rate);
        }
        assert_eq!(errs[0], errs[1]);
        assert_eq!(errs[0], errs[2]);
    }
    let elapsed = start.elapsed();
    let pass = mismatches.is_empty() && elapsed < Duration::from_secs(300);
    report(
        "LOOCV exactness",
        pass,
        &format!(
            "20 problems, {folds} folds ({excluded} ties excluded), {decided_by_bound} settled by bounds, {} mismatches, {:.1}s",
            mismatches.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass, "mismatches: {mismatches:?}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn bound_time(n: usize, seed: u64) -> f64 {
    let d = 20;
    let all = make_synthetic(seed, n + 5, d, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (base, plan) = split_for_update(&all, 5, 5, &mut rng).unwrap();
    let (old, _) = train(&base, 0.1, LossKind::Logistic, 1e-6, None).unwrap();
    let probe = make_synthetic(seed + 1, 2, d, 1.0).unwrap();
    let eta = probe.row(0).clone();
    let mut samples = Vec::with_capacity(301);
    let mut sink = 0.0;
    for _ in 0..301 {
        let t = Instant::now();
        let stats = compute_delta_s(&old, plan.added_instances(), plan.removed_instances(&base)).unwrap();
        let ball = old_optimum_ball(&old, &stats).unwrap();
        let b = ball.score_bounds_sparse(&eta).unwrap();
        samples.push(t.elapsed().as_secs_f64());
        sink += b.lower();
    }
    std::hint::black_box(sink);
    median(samples)
}

#[test]
fn bound_cost_independent_of_training_size() {
    let small = bound_time(10_000, 1);
    let large = bound_time(100_000, 2);
    let ratio = large / small;
    let pass = ratio < 2.0;
    report(
        "complexity",
        pass,
        &format!("median ball+score time: n=1e4 {:.2}us, n=1e5 {:.2}us, ratio {ratio:.2} (< 2)", small * 1e6, large * 1e6),
    );
    assert!(pass);
}

#[test]
fn box_dominance_and_width_uniformity() {
    let (cases, _) = suite();
    let slack = 1e-12;
    let mut dominance_ok = true;
    let mut uniform_ok = true;
    for case in cases {
        let stats = compute_delta_s(
            &case.old,
            case.plan.added_instances(),
            case.plan.removed_instances(&case.base),
        )
        .unwrap();
        let ball = old_optimum_ball(&case.old, &stats).unwrap();
        let g = objective_gradient(&case.updated, &case.old.beta, case.lambda, case.kind).unwrap();
        let gball = gradient_ball(&case.old.beta, &g, case.lambda).unwrap();
        for ball in [&ball, &gball] {
            let cb = ball.coefficient_bounds();
            let widths: Vec<f64> = cb.iter().map(|iv| iv.width()).collect();
            let spread = widths.iter().cloned().fold(f64::MIN, f64::max)
                - widths.iter().cloned().fold(f64::MAX, f64::min);
            uniform_ok &= spread == 0.0;
            for eta in case.directions() {
                let b = ball.score_bounds(&eta).unwrap();
                let nb = naive_score_bounds(&cb, &eta).unwrap();
                dominance_ok &= nb.lower() <= b.lower() + slack
                    && b.lower() <= b.upper()
                    && b.upper() <= nb.upper() + slack;
            }
        }
    }
    let pass = dominance_ok && uniform_ok;
    report(
        "box dominance / width uniformity",
        pass,
        &format!("naive box never tighter: {dominance_ok}; coefficient widths identical: {uniform_ok}"),
    );
    assert!(pass);
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = [0.0f64; 2];
    let probes = 120;
    for (k, kind) in [LossKind::Logistic, LossKind::L2Hinge].into_iter().enumerate() {
        for p in 0..probes {
            let n = rng.gen_range(5..60);
            let d = rng.gen_range(1..12);
            let ds = make_synthetic(1000 + p, n, d, rng.gen_range(0.0..3.0)).unwrap();
            let lambda = 10f64.powf(rng.gen_range(-3.0..0.0));
            let beta: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let g = objective_gradient(&ds, &beta, lambda, kind).unwrap();
            let h = 1e-6;
            let fd: Vec<f64> = (0..d)
                .map(|j| {
                    let mut plus = beta.clone();
                    let mut minus = beta.clone();
                    plus[j] += h;
                    minus[j] -= h;
                    (objective(&ds, &plus, lambda, kind).unwrap()
                        - objective(&ds, &minus, lambda, kind).unwrap())
                        / (2.0 * h)
                })
                .collect();
            let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
            worst[k] = worst[k].max(norm(&diff) / norm(&g).max(1e-300));
        }
    }
    let pass = worst.iter().all(|&w| w < 1e-5);
    report(
        "gradient correctness",
        pass,
        &format!("{probes} probes per loss, max rel. error logistic {:.2e}, l2hinge {:.2e} (< 1e-5)", worst[0], worst[1]),
    );
    assert!(pass);
}

/// Needs `DELTA_SCOPE_A9A` (training file) and `DELTA_SCOPE_A9A_TEST`.
#[test]
fn a9a_reference_numbers() {
    let (Ok(train_path), Ok(test_path)) = (
        std::env::var("DELTA_SCOPE_A9A"),
        std::env::var("DELTA_SCOPE_A9A_TEST"),
    ) else {
        println!("[SKIP] a9a reference numbers: set DELTA_SCOPE_A9A and DELTA_SCOPE_A9A_TEST to run");
        return;
    };
    let all = parse_libsvm(&std::fs::read(train_path).unwrap(), Some(123)).unwrap();
    let test = parse_libsvm(&std::fs::read(test_path).unwrap(), Some(123)).unwrap();
    let lambda = 0.01;
    let k = ((all.len() as f64) * 1e-4).round().max(1.0) as usize;
    let mut fractions = Vec::new();
    let mut tightness = Vec::new();
    for repeat in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(repeat);
        let n_add = k / 2;
        let (base, plan) = split_for_update(&all, n_add, k - n_add, &mut rng).unwrap();
        let (old, _) = train(&base, lambda, LossKind::Logistic, 1e-8, None).unwrap();
        let stats =
            compute_delta_s(&old, plan.added_instances(), plan.removed_instances(&base)).unwrap();
        let ball = old_optimum_ball(&old, &stats).unwrap();
        let decided = test
            .rows()
            .iter()
            .filter(|x| ball.classify(x).unwrap().label != Label::Unknown)
            .count();
        fractions.push(decided as f64 / test.len() as f64);
        tightness.push(2.0 * ball.radius);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let frac = mean(&fractions);
    let tight = mean(&tightness);
    let pass = (frac - 0.996345).abs() <= 0.05 && tight / 5.68e-3 < 3.0 && 5.68e-3 / tight < 3.0;
    report(
        "a9a reference numbers",
        pass,
        &format!("fraction determined {frac:.6} (0.996345 ± 0.05), tightness {tight:.3e} (5.68e-03 within x3)"),
    );
    assert!(pass);
}

#[test]
fn op2_efficiency_on_model_selection_grid() {
    let ds = make_synthetic(208, 208, 60, 1.5).unwrap();
    let grid: Vec<GridCell> = power_of_two_grid(-10, 0).into_iter().map(GridCell::linear).collect();
    let mut totals = Vec::new();
    let mut selections = Vec::new();
    for mode in [LoocvMode::Exact, LoocvMode::Op1, LoocvMode::Op2] {
        let opts = LoocvOptions {
            mode,
            ..LoocvOptions::default()
        };
        let sel = model_select(&ds, &grid, LossKind::Logistic, &opts, false).unwrap();
        totals.push(sel.total_inner_iterations());
        selections.push(sel.best);
    }
    let pass = totals[2] <= totals[1] && totals[1] <= totals[0];
    report(
        "op2 efficiency",
        pass,
        &format!(
            "inner iterations over 11 grid cells: exact {}, op1 {}, op2 {}; selected cells {:?}",
            totals[0], totals[1], totals[2], selections
        ),
    );
    assert!(pass);
}

