//! `flowlab`: run restoration experiments, train small velocity fields and
//! build view-time schedules from the command line.
//!
//! Exit codes: 0 on success, 1 for usage or config errors, 2 for runtime
//! or numeric failures (including experiments with failed cells).

mod commands;
mod config;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use flowlab_core::{Method, ScheduleMode};

use config::{GammaSetting, Overrides, UsageError};

#[derive(Debug, Parser)]
#[command(name = "flowlab", version, about = "Self-guided rectified-flow restoration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a small MLP velocity field on the configured target and save it.
    Train(TrainArgs),
    /// Restore one degraded batch with a single method and write the samples.
    Restore(RestoreArgs),
    /// Run every (method, seed) cell and write the report CSV.
    Compare(CompareArgs),
    /// Run `compare` once per t0 value and write one combined CSV.
    Sweep(SweepArgs),
    /// Build a view-time schedule and write it as JSON.
    Schedule(ScheduleArgs),
    /// Run the built-in algebraic identity checks.
    Check(CheckArgs),
}

#[derive(Debug, Args, Default)]
struct CommonArgs {
    /// TOML config with [target], [degradation], [sampler] and [experiment] sections.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed. Falls back to the config file, then FLOWLAB_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
struct SamplerArgs {
    /// Noise-injection time in (0, 1].
    #[arg(long)]
    t0: Option<f64>,
    /// Number of integration steps from t0 to 0.
    #[arg(long)]
    steps: Option<usize>,
    /// Guidance step size towards the observed coordinates.
    #[arg(long)]
    lambda: Option<f64>,
    /// Re-noising strength: `sigma_t` or a constant in [0, 1].
    #[arg(long, value_parser = clap::value_parser!(GammaSetting))]
    gamma: Option<GammaSetting>,
    /// Blend weight of the model estimate for `mcs`.
    #[arg(long)]
    mcs_weight: Option<f64>,
    /// Low/high band split for `hfs` and `nc`, as a normalized frequency in (0, 1).
    #[arg(long)]
    cutoff: Option<f64>,
    /// Make `hfs` noise the source with the injection noise instead of fresh draws.
    #[arg(long)]
    hfs_reuse_noise: bool,
    /// Shift of the noise schedule; 1 is the linear schedule.
    #[arg(long)]
    schedule_shift: Option<f64>,
}

#[derive(Debug, Args, Default)]
struct DataArgs {
    /// Number of particles per cell.
    #[arg(long)]
    particles: Option<usize>,
    /// Number of random projections for the sliced distance.
    #[arg(long)]
    projections: Option<usize>,
    /// Binary mask of observed coordinates, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    mask: Option<Vec<f64>>,
    /// Constant shift applied by the degradation, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    shift: Option<Vec<f64>>,
    /// Low-pass cutoff applied by the degradation.
    #[arg(long)]
    blur_cutoff: Option<f64>,
    /// Draw every degraded sample from this mixture component.
    #[arg(long)]
    mode_collapse: Option<usize>,
}

#[derive(Debug, Args, Default)]
struct RunArgs {
    /// Methods to compare, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    methods: Option<Vec<Method>>,
    /// Number of seeds, counting up from the base seed.
    #[arg(long)]
    seeds: Option<u64>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Record wall-clock runtime in the CSV (otherwise written as 0).
    #[arg(long)]
    timing: bool,
    /// Output CSV; printed to stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Optimizer steps.
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    /// Pairs per step.
    #[arg(long, default_value_t = 512)]
    batch: usize,
    /// Peak learning rate.
    #[arg(long, default_value_t = 5e-3)]
    lr: f64,
    /// Width of the two hidden layers.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Print the batch loss every this many steps; 0 disables.
    #[arg(long, default_value_t = 500)]
    log_every: usize,
    /// Where to write the trained field.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RestoreArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Sampler to run.
    #[arg(long)]
    method: Option<Method>,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Trained field to restore with instead of the analytic target field.
    #[arg(long, value_name = "PATH")]
    field: Option<PathBuf>,
    /// Output CSV of restored samples.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Also write a scatter plot of restored, degraded and target samples (2-D only).
    #[arg(long, value_name = "PATH")]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Injection times to sweep, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    t0_values: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    /// Schedule layout.
    #[arg(long, default_value = "diagonal")]
    mode: ScheduleMode,
    /// Number of views V.
    #[arg(long)]
    views: usize,
    /// Number of time frames T.
    #[arg(long)]
    frames: usize,
    /// Number of trajectories.
    #[arg(long, default_value_t = 1)]
    ntraj: usize,
    /// Output JSON; printed to stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// Seed for the random test cases. Falls back to FLOWLAB_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

fn overrides(
    common: &CommonArgs,
    method: Option<Method>,
    sampler: &SamplerArgs,
    data: &DataArgs,
    run: Option<&RunArgs>,
) -> Overrides {
    Overrides {
        method,
        t0: sampler.t0,
        steps: sampler.steps,
        lambda: sampler.lambda,
        gamma: sampler.gamma,
        mcs_weight: sampler.mcs_weight,
        cutoff: sampler.cutoff,
        hfs_reuse_injection_noise: sampler.hfs_reuse_noise,
        schedule_shift: sampler.schedule_shift,
        methods: run.and_then(|r| r.methods.clone()),
        seeds: run.and_then(|r| r.seeds),
        seed: common.seed,
        particles: data.particles,
        projections: data.projections,
        mask: data.mask.clone(),
        shift: data.shift.clone(),
        blur_cutoff: data.blur_cutoff,
        mode_collapse: data.mode_collapse,
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Restore(a) => commands::restore(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Schedule(a) => commands::schedule(&a),
        Command::Check(a) => commands::check(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
