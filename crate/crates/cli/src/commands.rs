use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::Context;
use flowlab_core::checks::identity_suite;
use flowlab_core::experiment::{summarize, Prepared, ReportRow};
use flowlab_core::field::{
    grid_error, train_mlp_field_with, AnalyticGmmField, MlpField, TrainConfig, VelocityField,
};
use flowlab_core::schedule::{build_schedule, schedule_to_json};
use flowlab_core::{run_restoration_experiment, t0_sweep, write_csv, ScheduleConfig, Tensor};

use crate::config::{load_config, resolve, resolve_seed, usage, FileConfig, Resolved};
use crate::output::write_atomic;
use crate::svg::{render_scatter, Series};
use crate::{
    overrides, CheckArgs, CommonArgs, CompareArgs, DataArgs, RestoreArgs, RunArgs, SamplerArgs,
    ScheduleArgs, SweepArgs, TrainArgs,
};

const DEFAULT_SWEEP: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

fn file_config(common: &CommonArgs) -> anyhow::Result<FileConfig> {
    match &common.config {
        Some(path) => load_config(path),
        None => Ok(FileConfig::default()),
    }
}

fn pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("starting worker pool")
}

/// Writes to `path`, or to stdout when there is none.
fn emit(path: Option<&Path>, fill: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
    match path {
        Some(p) => write_atomic(p, fill),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            fill(&mut lock)?;
            lock.flush()?;
            Ok(())
        }
    }
}

fn print_summary(rows: &[ReportRow], to_stdout: bool) {
    let mut lines = vec![format!(
        "{:<16} {:>5} {:>6} {:>5} {:>6} {:>12} {:>12}",
        "method", "t0", "lambda", "runs", "errors", "sliced_w2", "masked_mse"
    )];
    for s in summarize(rows) {
        lines.push(format!(
            "{:<16} {:>5} {:>6} {:>5} {:>6} {:>12.5} {:>12.5}",
            s.method.name(),
            s.t0,
            s.lambda,
            s.runs,
            s.errors,
            s.mean_sliced_w2,
            s.mean_masked_mse
        ));
    }
    for line in lines {
        if to_stdout {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    }
}

fn report(rows: &[ReportRow], run: &RunArgs) -> anyhow::Result<ExitCode> {
    emit(run.out.as_deref(), |w| Ok(write_csv(rows, w, run.timing)?))?;
    print_summary(rows, run.out.is_some());
    let failed: Vec<&ReportRow> = rows.iter().filter(|r| !r.is_ok()).collect();
    for r in &failed {
        eprintln!(
            "error: {} seed {} t0 {}: {}",
            r.method,
            r.seed,
            r.t0,
            r.error.as_deref().unwrap_or("")
        );
    }
    Ok(if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn resolve_run(common: &CommonArgs, sampler: &SamplerArgs, data: &DataArgs, run: &RunArgs) -> anyhow::Result<Resolved> {
    let file = file_config(common)?;
    resolve(&file, &overrides(common, None, sampler, data, Some(run)))
}

pub fn compare(a: &CompareArgs) -> anyhow::Result<ExitCode> {
    let r = resolve_run(&a.common, &a.sampler, &a.data, &a.run)?;
    let rows = pool(a.run.workers)?.install(|| run_restoration_experiment(&r.spec))?;
    report(&rows, &a.run)
}

pub fn sweep(a: &SweepArgs) -> anyhow::Result<ExitCode> {
    let r = resolve_run(&a.common, &a.sampler, &a.data, &a.run)?;
    let t0s = a
        .t0_values
        .clone()
        .or(r.t0_values.clone())
        .unwrap_or_else(|| DEFAULT_SWEEP.to_vec());
    if let Some(bad) = t0s.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(usage(format!("t0 value {bad} is outside (0, 1]")));
    }
    let rows = pool(a.run.workers)?.install(|| t0_sweep(&r.spec, &t0s))?;
    report(&rows, &a.run)
}

fn write_samples(path: &Path, x: &Tensor) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        let d = x.row_len();
        let header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for row in x.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    })
}

pub fn restore(a: &RestoreArgs) -> anyhow::Result<ExitCode> {
    let file = file_config(&a.common)?;
    let mut r = resolve(&file, &overrides(&a.common, a.method, &a.sampler, &a.data, None))?;
    r.spec.methods = vec![r.method];
    r.spec.seeds = vec![r.base_seed];
    let mut prepared = Prepared::new(&r.spec)?;
    if let Some(path) = &a.field {
        let field = MlpField::load(path).with_context(|| format!("loading field {}", path.display()))?;
        prepared = prepared.with_field(Box::new(field))?;
    }
    let cell = prepared.run_cell(r.method, r.base_seed)?;
    let Some(restored) = &cell.restored else {
        anyhow::bail!(
            "{} failed: {}",
            r.method,
            cell.row.error.as_deref().unwrap_or("unknown error")
        );
    };
    write_samples(&a.out, restored)?;
    if let Some(svg_path) = &a.svg {
        let series = [
            Series { label: "restored", samples: restored },
            Series { label: "degraded", samples: &cell.y },
            Series { label: "target", samples: &cell.reference },
        ];
        let svg = render_scatter(&series)?;
        write_atomic(svg_path, |w| Ok(w.write_all(svg.as_bytes())?))?;
    }
    println!(
        "{} seed {}: sliced_w2 {:.5} masked_mse {:.5}",
        r.method, r.base_seed, cell.row.sliced_w2, cell.row.masked_mse
    );
    Ok(ExitCode::SUCCESS)
}

pub fn train(a: &TrainArgs) -> anyhow::Result<ExitCode> {
    let file = file_config(&a.common)?;
    let r = resolve(&file, &crate::config::Overrides { seed: a.common.seed, ..Default::default() })?;
    let cfg = TrainConfig {
        steps: a.steps,
        batch: a.batch,
        lr: a.lr,
        seed: r.base_seed,
        hidden: a.hidden,
        ..TrainConfig::default()
    };
    if cfg.steps == 0 || cfg.batch == 0 || cfg.hidden == 0 || !(cfg.lr >= 0.0) {
        return Err(usage("steps, batch and hidden must be positive and lr non-negative"));
    }
    let target = &r.spec.target;
    let log_every = a.log_every;
    let field = train_mlp_field_with(target, &cfg, |step, loss| {
        if log_every > 0 && (step % log_every == 0 || step + 1 == cfg.steps) {
            eprintln!("step {step:>6}  loss {loss:.5}");
        }
    })?;
    write_atomic(&a.out, |w| Ok(w.write_all(&field.to_bytes())?))?;
    println!("wrote {} ({} weights)", a.out.display(), field.params().len());
    if target.dim() == 2 {
        let analytic = AnalyticGmmField::new(target.clone());
        let err = grid_error(&field, &analytic as &dyn VelocityField, -2.0, 2.0, 10, &[0.25, 0.5, 0.75])?;
        println!("mean grid error vs analytic field: {err:.4}");
    }
    Ok(ExitCode::SUCCESS)
}

pub fn schedule(a: &ScheduleArgs) -> anyhow::Result<ExitCode> {
    let cfg = ScheduleConfig::new(a.mode, a.views, a.frames, a.ntraj).map_err(|e| usage(e.to_string()))?;
    let trajectories = build_schedule(&cfg)?;
    let json = schedule_to_json(&cfg, &trajectories)?;
    emit(a.out.as_deref(), |w| Ok(writeln!(w, "{json}")?))?;
    Ok(ExitCode::SUCCESS)
}

pub fn check(a: &CheckArgs) -> anyhow::Result<ExitCode> {
    let seed = resolve_seed(a.seed, None)?;
    let mut ok = true;
    for r in identity_suite(seed)? {
        let verdict = if r.passed() { "ok" } else { "FAILED" };
        println!(
            "{:<24} {:>5} cases  max error {:.3e}  tolerance {:.0e}  {verdict}",
            r.name, r.cases, r.max_error, r.tolerance
        );
        ok &= r.passed();
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
