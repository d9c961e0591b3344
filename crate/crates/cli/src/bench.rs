//! Tightness and timing sweeps over seeded random updates.
//!
//! Each repeat splits the dataset into a base set and an update (half
//! additions, half removals), trains on the base, then measures the bound
//! build and, unless disabled, the warm-started retrain.

use std::time::{Duration, Instant};

use anyhow::{bail, Result};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use delta_scope::{
    compute_delta_s, incremental_train, make_synthetic, old_optimum_ball, split_for_update,
    train, LossKind, SparseDataset, UpdatePlan,
};

use crate::commands::{load_dataset, write_output};
use crate::report::Report;
use crate::{BenchArgs, Format, Sweep};

/// Timed repetitions per cell; the reported time is their median.
pub const INNER_REPETITIONS: usize = 5;
/// Each repetition runs the bound computation in a loop for at least this
/// long and reports the per-call mean, so microsecond-scale work is not
/// swamped by clock resolution.
const MIN_BATCH: Duration = Duration::from_micros(200);

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub dataset: String,
    pub loss: String,
    pub lambda: f64,
    pub sweep: &'static str,
    /// Nominal (n_A + n_R) / n_train.
    pub update_fraction: f64,
    /// Nominal n_old / n_train; empty in the fraction sweep.
    pub size_fraction: Option<f64>,
    pub n_train: usize,
    pub n_old: usize,
    pub n_added: usize,
    pub n_removed: usize,
    pub repeat: usize,
    /// U - L of every coefficient interval, i.e. 2r.
    pub tightness: f64,
    pub fraction_determined: f64,
    /// Seconds for summarizing the update, building the ball and bounding all
    /// coefficients.
    pub bound_time: f64,
    pub retrain_time: Option<f64>,
    pub retrain_iterations: Option<usize>,
}

/// One point of a sweep: how many instances to modify out of which base.
#[derive(Debug, Clone, Copy)]
struct Point {
    update_fraction: f64,
    size_fraction: Option<f64>,
    n_modified: usize,
    n_pool: usize,
}

fn points(args: &BenchArgs, n_train: usize) -> Result<Vec<Point>> {
    let count = |f: f64| ((f * n_train as f64).round() as usize).max(1);
    let check = |f: f64, what: &str| {
        if !(f > 0.0 && f <= 1.0) {
            bail!("{what} {f} must lie in (0, 1]");
        }
        Ok(())
    };
    match args.sweep {
        Sweep::Fraction => args
            .fractions
            .iter()
            .map(|&f| {
                check(f, "update fraction")?;
                Ok(Point {
                    update_fraction: f,
                    size_fraction: None,
                    n_modified: count(f),
                    n_pool: n_train,
                })
            })
            .collect(),
        Sweep::Size => {
            let fixed = 0.001;
            let k = count(fixed);
            args.sizes
                .iter()
                .map(|&p| {
                    check(p, "size fraction")?;
                    let n_old = count(p);
                    let n_add = k - k / 2;
                    if n_old + n_add > n_train {
                        bail!("size fraction {p} leaves no room for {n_add} additions");
                    }
                    Ok(Point {
                        update_fraction: fixed,
                        size_fraction: Some(p),
                        n_modified: k,
                        n_pool: n_old + n_add,
                    })
                })
                .collect()
        }
    }
}

/// The base set and update for one repeat: `n_pool` rows are drawn from
/// `ds` (all of them when `n_pool == len`), then `n_modified` instances are
/// split into additions held out of the base (the larger half) and removals
/// from it.
pub fn draw_update(
    ds: &SparseDataset,
    seed: u64,
    stream: u64,
    n_pool: usize,
    n_modified: usize,
) -> Result<(SparseDataset, UpdatePlan)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let pool = if n_pool < ds.len() {
        let mut picks = sample(&mut rng, ds.len(), n_pool).into_vec();
        picks.sort_unstable();
        ds.subset(&picks)?
    } else {
        ds.clone()
    };
    let n_removed = n_modified / 2;
    let n_added = n_modified - n_removed;
    Ok(split_for_update(&pool, n_added, n_removed, &mut rng)?)
}

/// Median per-call time of `f`.
fn median_time(mut f: impl FnMut()) -> f64 {
    let start = Instant::now();
    f();
    let once = start.elapsed().max(Duration::from_nanos(1));
    let batch = (MIN_BATCH.as_nanos() / once.as_nanos()).max(1) as u32;
    let mut samples: Vec<f64> = (0..INNER_REPETITIONS)
        .map(|_| {
            let start = Instant::now();
            for _ in 0..batch {
                f();
            }
            start.elapsed().as_secs_f64() / f64::from(batch)
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[INNER_REPETITIONS / 2]
}

pub fn sweep(
    dataset: &str,
    ds: &SparseDataset,
    test: &SparseDataset,
    kind: LossKind,
    args: &BenchArgs,
) -> Result<Vec<BenchRow>> {
    if args.repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let points = points(args, ds.len())?;
    let mut rows = Vec::new();
    for (p_idx, point) in points.iter().enumerate() {
        for repeat in 0..args.repeats {
            // One stream per (point, repeat) keeps splits identical across
            // lambdas and independent of everything else.
            let stream = (p_idx * args.repeats + repeat) as u64;
            let (base, plan) = draw_update(ds, args.seed, stream, point.n_pool, point.n_modified)?;
            for &lambda in &args.lambda {
                rows.push(measure(dataset, ds.len(), &base, &plan, test, kind, lambda, args, point, repeat)?);
            }
        }
    }
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn measure(
    dataset: &str,
    n_train: usize,
    base: &SparseDataset,
    plan: &UpdatePlan,
    test: &SparseDataset,
    kind: LossKind,
    lambda: f64,
    args: &BenchArgs,
    point: &Point,
    repeat: usize,
) -> Result<BenchRow> {
    let (old, _) = train(base, lambda, kind, args.tol, None)?;
    let bound = || -> Result<_> {
        let stats = compute_delta_s(&old, plan.added_instances(), plan.removed_instances(base))?;
        let ball = old_optimum_ball(&old, &stats)?;
        let coef = ball.coefficient_bounds();
        Ok((ball, coef))
    };
    let (ball, coef) = bound()?;
    let bound_time = median_time(|| {
        std::hint::black_box(bound().expect("bounds succeeded once"));
    });
    let tightness = coef.first().map_or(0.0, |iv| iv.width());

    let mut decided = 0usize;
    for i in 0..test.len() {
        if ball.classify(test.row(i))?.label != delta_scope::Label::Unknown {
            decided += 1;
        }
    }

    let (retrain_time, retrain_iterations) = if args.no_retrain {
        (None, None)
    } else {
        let updated = base.apply_update(plan)?;
        let start = Instant::now();
        let (_, solve) = incremental_train(&old, &updated, args.tol, |_, _| false)?;
        (Some(start.elapsed().as_secs_f64()), Some(solve.iterations))
    };

    Ok(BenchRow {
        dataset: dataset.to_string(),
        loss: kind.to_string(),
        lambda,
        sweep: match args.sweep {
            Sweep::Fraction => "fraction",
            Sweep::Size => "size",
        },
        update_fraction: point.update_fraction,
        size_fraction: point.size_fraction,
        n_train,
        n_old: base.len(),
        n_added: plan.n_added(),
        n_removed: plan.n_removed(),
        repeat,
        tightness,
        fraction_determined: decided as f64 / test.len() as f64,
        bound_time,
        retrain_time,
        retrain_iterations,
    })
}

pub fn run(args: &BenchArgs, argv: &[String]) -> Result<()> {
    let mut report = Report::new("bench", argv);
    report.inputs.seed = Some(args.seed);
    let (name, ds, test) = match &args.data {
        Some(path) => {
            let raw = load_dataset(&mut report, "data", path, None, false)?;
            let test = match &args.test {
                Some(t) => load_dataset(&mut report, "test", t, Some(raw.dim()), false)?,
                None => raw.clone(),
            };
            let name = path
                .file_stem()
                .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
            (name, raw, test)
        }
        None => {
            if args.test.is_some() {
                bail!("--test needs --data");
            }
            let ds = make_synthetic(args.seed, args.n, args.d, args.separation)?;
            let test = make_synthetic(args.seed.wrapping_add(1), args.n_test, args.d, args.separation)?;
            (format!("synthetic-n{}-d{}", args.n, args.d), ds, test)
        }
    };
    let (ds, test) = if args.add_bias {
        (ds.with_bias(), test.with_bias())
    } else {
        (ds, test)
    };
    if test.is_empty() {
        bail!("no test instances");
    }

    let rows = sweep(&name, &ds, &test, args.loss.into(), args)?;
    let bytes = match args.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in &rows {
                w.serialize(row)?;
            }
            w.into_inner()?
        }
        Format::Json => {
            // Absent optional columns are dropped rather than sent as null.
            let mut rows = serde_json::to_value(&rows)?;
            for row in rows.as_array_mut().into_iter().flatten() {
                if let Some(obj) = row.as_object_mut() {
                    obj.retain(|_, v| !v.is_null());
                }
            }
            report.set_results(serde_json::json!({ "rows": rows }))?;
            report.to_json()?.into_bytes()
        }
    };
    write_output(args.out.as_deref(), &bytes)
}
