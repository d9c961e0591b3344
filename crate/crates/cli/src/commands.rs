use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use delta_scope::{
    compute_delta_s, incremental_train, make_synthetic, model_select, norm_change_bound,
    old_optimum_ball, parse_libsvm, power_of_two_grid, train as train_model, write_libsvm, FoldDecision, GridCell, Label,
    LoocvMode, LoocvOptions, RbfFeatureMap, SolutionBall, SparseDataset, TrainedModel,
    UpdatePlan, UpdateStats,
};

use crate::artifact::ModelArtifact;
use crate::report::{write_atomic, Report};
use crate::{
    CoefArgs, Format, GenArgs, LabelArgs, LoocvArgs, Mode, TrainArgs, UpdateArgs,
    RESIDUAL_WARNING,
};

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

/// Parses a libsvm file, pinning its dimension when `dim` is given.
pub(crate) fn load_dataset(
    report: &mut Report,
    flag: &str,
    path: &Path,
    dim: Option<usize>,
    bias: bool,
) -> Result<SparseDataset> {
    let bytes = read_file(path)?;
    report.record_file(flag, path, &bytes);
    let ds = parse_libsvm(&bytes, dim).with_context(|| format!("parsing {}", path.display()))?;
    Ok(if bias { ds.with_bias() } else { ds })
}

/// Writes to `out`, or stdout when absent.
pub(crate) fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    match out {
        Some(path) => write_atomic(path, bytes),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

/// Renders a float so that it parses back to the same value.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub(crate) fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    Ok(w.into_inner()?)
}

fn residual_warning(report: &mut Report, what: &str, residual: f64) {
    if residual > RESIDUAL_WARNING {
        report.warnings.push(format!(
            "{what} gradient residual {residual:e} exceeds {RESIDUAL_WARNING:e}; \
             bounds assume an exact optimum"
        ));
    }
}

pub fn gen(args: &GenArgs, argv: &[String]) -> Result<()> {
    let ds = make_synthetic(args.seed, args.n, args.d, args.separation)?;
    let text = write_libsvm(&ds);
    let Some(out) = &args.out else {
        return write_output(None, text.as_bytes());
    };
    write_atomic(out, text.as_bytes())?;
    let mut report = Report::new("gen", argv);
    report.inputs.seed = Some(args.seed);
    report.set_results(serde_json::json!({
        "path": out.display().to_string(),
        "n": ds.len(),
        "d": ds.dim(),
        "positives": ds.labels().iter().filter(|&&y| y > 0.0).count(),
    }))?;
    write_output(None, report.to_json()?.as_bytes())
}

#[derive(Serialize)]
struct SolveSummary {
    iterations: usize,
    final_grad_norm: f64,
    final_objective: f64,
    stopped_early: bool,
    wall_time: f64,
}

pub fn train(args: &TrainArgs, argv: &[String]) -> Result<()> {
    let mut report = Report::new("train", argv);
    let ds = load_dataset(&mut report, "data", &args.data, None, args.add_bias)?;
    let (model, solve) = train_model(&ds, args.lambda, args.loss.into(), args.tol, None)?;
    let artifact = ModelArtifact::from_model(&model, args.add_bias);
    let text = artifact.to_json()?;
    write_atomic(&args.out, text.as_bytes())?;
    residual_warning(&mut report, "trained model", model.grad_residual);

    if args.format == Format::Csv {
        let rows = model
            .beta
            .iter()
            .enumerate()
            .map(|(j, b)| vec![j.to_string(), fmt_f64(*b)]);
        return write_output(args.report.as_deref(), &csv_table(&["index", "beta"], rows)?);
    }
    report.set_results(serde_json::json!({
        "model": args.out.display().to_string(),
        "loss": model.kind.to_string(),
        "lambda": model.lambda,
        "dim": model.dim(),
        "bias": args.add_bias,
        "n_train": model.n_train,
        "grad_residual": model.grad_residual,
        "solve": SolveSummary {
            iterations: solve.iterations,
            final_grad_norm: solve.final_grad_norm,
            final_objective: solve.final_objective,
            stopped_early: solve.stopped_early,
            wall_time: solve.wall_time,
        },
    }))?;
    write_output(args.report.as_deref(), report.to_json()?.as_bytes())
}

/// Parses a removal list: one 0-based index per line, blank lines ignored.
pub fn parse_indices(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let i = line
            .parse()
            .with_context(|| format!("line {}: {line:?} is not a row index", lineno + 1))?;
        out.push(i);
    }
    Ok(out)
}

/// A model together with the update applied to its training set.
pub(crate) struct LoadedUpdate {
    pub model: TrainedModel,
    pub bias: bool,
    pub base: Option<SparseDataset>,
    pub plan: UpdatePlan,
    pub stats: UpdateStats,
    pub ball: SolutionBall,
}

impl LoadedUpdate {
    pub fn raw_dim(&self) -> usize {
        self.model.dim() - usize::from(self.bias)
    }
}

pub(crate) fn load_update(report: &mut Report, args: &UpdateArgs) -> Result<LoadedUpdate> {
    let bytes = read_file(&args.model)?;
    report.record_file("model", &args.model, &bytes);
    let artifact = ModelArtifact::from_json(std::str::from_utf8(&bytes).context("model file is not UTF-8")?)?;
    let model = artifact.to_model()?;
    let raw_dim = artifact.raw_dim();
    let bias = artifact.bias;

    let base = match &args.data {
        Some(path) => {
            let ds = load_dataset(report, "data", path, Some(raw_dim), bias)?;
            if ds.len() != model.n_train {
                bail!(
                    "model was trained on {} instances but {} has {}",
                    model.n_train,
                    path.display(),
                    ds.len()
                );
            }
            Some(ds)
        }
        None => None,
    };

    let mut added = Vec::new();
    if let Some(path) = &args.add {
        let bytes = read_file(path)?;
        report.record_file("add", path, &bytes);
        // An empty file is an empty set of additions.
        if bytes.iter().any(|b| !b.is_ascii_whitespace()) {
            let ds = parse_libsvm(&bytes, Some(raw_dim))
                .with_context(|| format!("parsing {}", path.display()))?;
            let ds = if bias { ds.with_bias() } else { ds };
            added = ds.rows().iter().cloned().zip(ds.labels().iter().copied()).collect();
        }
    }

    let mut removed = Vec::new();
    if let Some(path) = &args.remove {
        let bytes = read_file(path)?;
        report.record_file("remove", path, &bytes);
        removed = parse_indices(std::str::from_utf8(&bytes).context("removal list is not UTF-8")?)
            .with_context(|| format!("parsing {}", path.display()))?;
        if !removed.is_empty() && base.is_none() {
            bail!("--remove needs --data to look up the removed instances");
        }
    }

    let plan = UpdatePlan { added, removed };
    let stats = match &base {
        Some(ds) => {
            plan.validate(ds)?;
            compute_delta_s(&model, plan.added_instances(), plan.removed_instances(ds))?
        }
        None => compute_delta_s(&model, plan.added_instances(), [])?,
    };
    let ball = old_optimum_ball(&model, &stats)?;
    residual_warning(report, "model", model.grad_residual);
    Ok(LoadedUpdate {
        model,
        bias,
        base,
        plan,
        stats,
        ball,
    })
}

#[derive(Serialize)]
struct UpdateSummary {
    n_old: usize,
    n_new: usize,
    n_added: usize,
    n_removed: usize,
    lambda: f64,
    radius: f64,
}

impl UpdateSummary {
    fn of(u: &LoadedUpdate) -> Self {
        Self {
            n_old: u.stats.n_old,
            n_new: u.stats.n_new,
            n_added: u.stats.n_added,
            n_removed: u.stats.n_removed,
            lambda: u.model.lambda,
            radius: u.ball.radius,
        }
    }
}

#[derive(Serialize)]
struct CoefEntry {
    index: usize,
    lower: f64,
    upper: f64,
    width: f64,
}

pub fn coef_sensitivity(args: &CoefArgs, argv: &[String]) -> Result<()> {
    let mut report = Report::new("coef-sensitivity", argv);
    let u = load_update(&mut report, &args.update)?;
    let intervals = u.ball.coefficient_bounds();

    if args.format == Format::Csv {
        let rows = intervals.iter().enumerate().map(|(j, iv)| {
            vec![j.to_string(), fmt_f64(iv.lower()), fmt_f64(iv.upper()), fmt_f64(iv.width())]
        });
        return write_output(args.out.as_deref(), &csv_table(&["index", "lower", "upper", "width"], rows)?);
    }

    let norm = |q| norm_change_bound(&u.model.beta, &intervals, q);
    let coefficients: Vec<CoefEntry> = intervals
        .iter()
        .enumerate()
        .map(|(index, iv)| CoefEntry {
            index,
            lower: iv.lower(),
            upper: iv.upper(),
            width: iv.width(),
        })
        .collect();
    report.set_results(serde_json::json!({
        "update": UpdateSummary::of(&u),
        "width": 2.0 * u.ball.radius,
        "coefficients": coefficients,
        "norm_change_bound": {
            "l1": norm(1.0)?,
            "l2": norm(2.0)?,
            "linf": norm(f64::INFINITY)?,
        },
    }))?;
    write_output(args.out.as_deref(), report.to_json()?.as_bytes())
}

#[derive(Serialize)]
struct LabelEntry {
    index: usize,
    label: f64,
    lower: f64,
    upper: f64,
    decision: &'static str,
}

pub fn label_sensitivity(args: &LabelArgs, argv: &[String]) -> Result<()> {
    let mut report = Report::new("label-sensitivity", argv);
    let u = load_update(&mut report, &args.update)?;
    let test = load_dataset(&mut report, "test", &args.test, Some(u.raw_dim()), u.bias)?;

    let mut entries = Vec::with_capacity(test.len());
    for i in 0..test.len() {
        let d = u.ball.classify(test.row(i))?;
        entries.push(LabelEntry {
            index: i,
            label: test.label(i),
            lower: d.bounds.lower(),
            upper: d.bounds.upper(),
            decision: d.label.as_str(),
        });
    }
    let count = |l: Label| entries.iter().filter(|e| e.decision == l.as_str()).count();
    let (n_plus, n_minus, n_unknown) = (count(Label::Plus), count(Label::Minus), count(Label::Unknown));
    let fraction_determined = (n_plus + n_minus) as f64 / test.len() as f64;

    if let Some(path) = &args.csv {
        write_atomic(path, &label_csv(&entries)?)?;
    }
    if args.format == Format::Csv {
        return write_output(args.out.as_deref(), &label_csv(&entries)?);
    }

    let retrain = if args.check_retrain {
        let Some(base) = &u.base else {
            bail!("--check-retrain needs --data");
        };
        let updated = base.apply_update(&u.plan)?;
        let start = Instant::now();
        let (new_model, solve) = incremental_train(&u.model, &updated, args.tol, |_, _| false)?;
        let retrain_time = start.elapsed().as_secs_f64();
        let mut decided = 0;
        let mut mismatches = 0;
        for e in &entries {
            let score = new_model.decision_value(test.row(e.index));
            let agrees = match e.decision {
                "+1" => score > 0.0,
                "-1" => score < 0.0,
                _ => continue,
            };
            decided += 1;
            mismatches += usize::from(!agrees);
        }
        if mismatches > 0 {
            report.warnings.push(format!(
                "{mismatches} decided labels disagree with the retrained model"
            ));
        }
        Some(serde_json::json!({
            "decided": decided,
            "mismatches": mismatches,
            "iterations": solve.iterations,
            "grad_residual": new_model.grad_residual,
            "retrain_time": retrain_time,
        }))
    } else {
        None
    };

    let mut results = serde_json::json!({
        "update": UpdateSummary::of(&u),
        "n_test": test.len(),
        "n_plus": n_plus,
        "n_minus": n_minus,
        "n_unknown": n_unknown,
        "fraction_determined": fraction_determined,
        "instances": entries,
    });
    if let Some(r) = retrain {
        results["retrain"] = r;
    }
    report.set_results(results)?;
    write_output(args.out.as_deref(), report.to_json()?.as_bytes())
}

fn label_csv(entries: &[LabelEntry]) -> Result<Vec<u8>> {
    csv_table(
        &["index", "lower", "upper", "decision"],
        entries.iter().map(|e| {
            vec![e.index.to_string(), fmt_f64(e.lower), fmt_f64(e.upper), e.decision.to_string()]
        }),
    )
}

/// Parses `LO:HI` into an inclusive range of exponents.
pub fn parse_exponent_range(spec: &str) -> Result<(i32, i32)> {
    let (lo, hi) = spec
        .split_once(':')
        .with_context(|| format!("expected LO:HI, got {spec:?}"))?;
    let lo: i32 = lo.trim().parse().with_context(|| format!("bad exponent {lo:?}"))?;
    let hi: i32 = hi.trim().parse().with_context(|| format!("bad exponent {hi:?}"))?;
    if lo > hi {
        bail!("empty range {spec:?}");
    }
    Ok((lo, hi))
}

#[derive(Serialize)]
struct CellEntry {
    lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    error_rate: f64,
    error_lower: f64,
    error_upper: f64,
    pruned: bool,
    unknown_after_bounds: usize,
    solves_performed: usize,
    inner_iterations: usize,
    bound_time: f64,
    solve_time: f64,
    wall_time: f64,
}

#[derive(Serialize)]
struct FoldEntry {
    index: usize,
    decision: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    upper: Option<f64>,
    solver_iterations: usize,
}

fn decision_name(d: FoldDecision) -> &'static str {
    match d {
        FoldDecision::CorrectByBound => "correct_by_bound",
        FoldDecision::WrongByBound => "wrong_by_bound",
        FoldDecision::ResolvedBySolve { correct: true } => "solved_correct",
        FoldDecision::ResolvedBySolve { correct: false } => "solved_wrong",
        FoldDecision::ResolvedByEarlyStop { correct: true } => "early_stop_correct",
        FoldDecision::ResolvedByEarlyStop { correct: false } => "early_stop_wrong",
        FoldDecision::Pending => "pending",
    }
}

pub fn loocv(args: &LoocvArgs, argv: &[String]) -> Result<()> {
    let mut report = Report::new("loocv", argv);
    report.inputs.seed = Some(args.seed);
    if args.add_bias && args.rbf_gamma.is_some() {
        bail!("--add-bias applies to linear features only; drop it with --rbf-gamma");
    }
    let ds = load_dataset(&mut report, "data", &args.data, None, args.add_bias)?;

    let lambdas = match (&args.grid, args.lambda) {
        (Some(spec), _) => {
            let (lo, hi) = parse_exponent_range(spec)?;
            power_of_two_grid(lo, hi)
        }
        (None, Some(l)) => vec![l],
        (None, None) => bail!("give --lambda or --grid"),
    };
    let grid: Vec<GridCell> = match &args.rbf_gamma {
        Some(spec) => {
            let (lo, hi) = parse_exponent_range(spec)?;
            let map = RbfFeatureMap::sample_centers(&ds, args.rbf_centers, 1.0, args.seed);
            power_of_two_grid(lo, hi)
                .into_iter()
                .flat_map(|gamma| {
                    let map = map.with_gamma(gamma);
                    lambdas.iter().map(move |&lambda| GridCell {
                        lambda,
                        features: Some(map.clone()),
                    })
                })
                .collect()
        }
        None => lambdas.iter().map(|&l| GridCell::linear(l)).collect(),
    };

    let opts = LoocvOptions {
        mode: match args.mode {
            Mode::Op1 => LoocvMode::Op1,
            Mode::Op2 => LoocvMode::Op2,
            Mode::Exact => LoocvMode::Exact,
        },
        order_trick: args.order,
        fold_tol: args.tol,
        parallel: rayon::current_num_threads() > 1,
        ..LoocvOptions::default()
    };
    let start = Instant::now();
    let selection = model_select(&ds, &grid, args.loss.into(), &opts, args.prune)?;
    let wall_time = start.elapsed().as_secs_f64();

    let cells: Vec<CellEntry> = selection
        .cells
        .iter()
        .map(|c| CellEntry {
            lambda: c.cell.lambda,
            gamma: c.cell.features.as_ref().map(|m| m.gamma),
            error_rate: c.result.error_rate,
            error_lower: c.result.error_lower,
            error_upper: c.result.error_upper,
            pruned: c.result.pruned,
            unknown_after_bounds: c.result.unknown_after_bounds,
            solves_performed: c.result.solves_performed,
            inner_iterations: c.result.inner_iterations,
            bound_time: c.result.bound_time,
            solve_time: c.result.solve_time,
            wall_time: c.result.wall_time,
        })
        .collect();

    if args.format == Format::Csv {
        let opt = |g: Option<f64>| g.map(fmt_f64).unwrap_or_default();
        let rows = cells.iter().map(|c| {
            vec![
                fmt_f64(c.lambda),
                opt(c.gamma),
                fmt_f64(c.error_rate),
                fmt_f64(c.error_lower),
                fmt_f64(c.error_upper),
                c.pruned.to_string(),
                c.unknown_after_bounds.to_string(),
                c.solves_performed.to_string(),
                c.inner_iterations.to_string(),
                fmt_f64(c.bound_time),
                fmt_f64(c.solve_time),
                fmt_f64(c.wall_time),
            ]
        });
        let header = [
            "lambda", "gamma", "error_rate", "error_lower", "error_upper", "pruned",
            "unknown_after_bounds", "solves_performed", "inner_iterations", "bound_time",
            "solve_time", "wall_time",
        ];
        return write_output(args.out.as_deref(), &csv_table(&header, rows)?);
    }

    let best = &cells[selection.best];
    let mut results = serde_json::json!({
        "mode": format!("{:?}", args.mode).to_lowercase(),
        "prune": args.prune,
        "order": args.order,
        "n": ds.len(),
        "dim": ds.dim(),
        "n_cells": cells.len(),
        "selected": {
            "cell": selection.best,
            "lambda": best.lambda,
            "error_rate": best.error_rate,
        },
        "timing": {
            "bound_time": cells.iter().map(|c| c.bound_time).sum::<f64>(),
            "solve_time": cells.iter().map(|c| c.solve_time).sum::<f64>(),
            "wall_time": wall_time,
            "inner_iterations": selection.total_inner_iterations(),
        },
    });
    if let Some(g) = best.gamma {
        results["selected"]["gamma"] = g.into();
    }
    if args.folds {
        if selection.cells.len() != 1 {
            bail!("--folds is only available for a single grid cell");
        }
        let folds: Vec<FoldEntry> = selection.cells[0]
            .result
            .fold_outcomes
            .iter()
            .map(|f| FoldEntry {
                index: f.index,
                decision: decision_name(f.decision),
                lower: f.bounds.map(|b| b.lower()),
                upper: f.bounds.map(|b| b.upper()),
                solver_iterations: f.solver_iterations,
            })
            .collect();
        results["folds"] = serde_json::to_value(folds)?;
    }
    results["cells"] = serde_json::to_value(&cells)?;
    report.set_results(results)?;
    write_output(args.out.as_deref(), report.to_json()?.as_bytes())
}
