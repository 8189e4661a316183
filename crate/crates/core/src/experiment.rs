//! Restoration experiments on Gaussian-mixture targets.
//!
//! Each `(method, seed)` cell degrades a batch of target samples, restores
//! it with the analytic target field and scores the result. All randomness
//! in a cell is derived from its seed alone:
//!
//! | stream           | use                                    |
//! |------------------|----------------------------------------|
//! | `split(0)`       | clean samples that are degraded into y |
//! | `split(1)`       | sampler noise                          |
//! | `split(2)`       | fresh target samples for the distance  |
//! | `split(3)`       | projection directions                  |
//!
//! Methods sharing a seed therefore see the same `y`, the same reference
//! set and the same projections, so their scores differ only through the
//! sampler.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{invalid, FlowError, Result};
use crate::field::{AnalyticGmmField, DataSampler, GmmSpec, VelocityField};
use crate::metrics::{masked_mse, sliced_wasserstein, DEFAULT_PROJECTIONS};
use crate::rng::SeededRng;
use crate::sampler::{restore, Method, SamplerConfig};
use crate::spectral::{filter_rows, frequency_filter, FilterMode};
use crate::tensor::Tensor;

pub const DEFAULT_PARTICLES: usize = 10_000;

/// Column order of the report CSV.
pub const CSV_HEADER: [&str; 7] = [
    "method",
    "seed",
    "t0",
    "lambda",
    "sliced_w2",
    "masked_mse",
    "runtime_ms",
];

/// Jitter added to the degraded covariance when a blur makes it singular.
const BLUR_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Degradation {
    /// Constant offset added to every sample; empty means none.
    pub shift: Vec<f64>,
    /// Low-pass cutoff applied to each sample as a 1-D signal.
    pub blur_cutoff: Option<f64>,
    /// Draw every sample from this component only.
    pub mode_collapse: Option<usize>,
}

impl Degradation {
    pub fn is_identity(&self) -> bool {
        self.shift.iter().all(|&s| s == 0.0) && self.blur_cutoff.is_none() && self.mode_collapse.is_none()
    }

    /// Degraded samples drawn from `target`.
    pub fn apply(&self, target: &GmmSpec, rng: &mut SeededRng, n: usize) -> Result<Tensor> {
        let mut x = match self.mode_collapse {
            Some(k) => GmmSpec::single(component(target, k)?.clone()).sample(rng, n)?,
            None => target.sample(rng, n)?,
        };
        if let Some(c) = self.blur_cutoff {
            x = filter_rows(&x, c, FilterMode::Low)?;
        }
        if !self.shift.is_empty() {
            let shift = Tensor::from_vec(self.shift.clone())?.expand_rows_like(&x)?;
            x = x.add(&shift)?;
        }
        Ok(x)
    }

    /// Law of the degraded samples, as a mixture.
    pub fn degraded_spec(&self, target: &GmmSpec) -> Result<GmmSpec> {
        let d = target.dim();
        let base = match self.mode_collapse {
            Some(k) => GmmSpec::single(component(target, k)?.clone()),
            None => target.clone(),
        };
        let (map, jitter) = match self.blur_cutoff {
            Some(c) => (blur_matrix(d, c)?, BLUR_JITTER),
            None => (DMatrix::identity(d, d), 0.0),
        };
        let shift = if self.shift.is_empty() {
            vec![0.0; d]
        } else {
            self.shift.clone()
        };
        base.affine(&map, &shift, jitter)
    }
}

fn component(target: &GmmSpec, k: usize) -> Result<&crate::field::GaussianSpec> {
    target.components().get(k).ok_or_else(|| {
        invalid(
            "mode_collapse",
            format!("component {k} out of range ({} components)", target.components().len()),
        )
    })
}

/// Matrix of the (linear) low-pass filter on length-`d` signals.
fn blur_matrix(d: usize, cutoff: f64) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        let col = frequency_filter(&Tensor::from_vec(e)?, cutoff, FilterMode::Low)?;
        for (r, v) in col.data().iter().enumerate() {
            m[(r, i)] = *v;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub target: GmmSpec,
    pub degradation: Degradation,
    /// `[d]` binary mask of observed coordinates.
    pub mask: Tensor,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub cfg: SamplerConfig,
    pub particles: usize,
    pub n_proj: usize,
}

impl ExperimentSpec {
    /// Two modes at `(+-2, 0)` with std 0.3, shifted by `(0.8, 0.8)`, first
    /// coordinate observed.
    pub fn two_mode_shift() -> Result<Self> {
        Ok(Self {
            target: GmmSpec::symmetric_pair(&[2.0, 0.0], 0.3)?,
            degradation: Degradation {
                shift: vec![0.8, 0.8],
                ..Degradation::default()
            },
            mask: Tensor::from_vec(vec![1.0, 0.0])?,
            methods: vec![Method::Ode, Method::Sde, Method::SelfGuidedSde],
            seeds: (0..10).collect(),
            cfg: SamplerConfig::default(),
            particles: DEFAULT_PARTICLES,
            n_proj: DEFAULT_PROJECTIONS,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.target.dim();
        if self.methods.is_empty() {
            return Err(invalid("methods", "at least one method required"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(invalid("seeds", "must be distinct"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed required"));
        }
        if self.mask.shape() != [d] {
            return Err(FlowError::ShapeMismatch {
                expected: vec![d],
                actual: self.mask.shape().to_vec(),
            });
        }
        if !self.degradation.shift.is_empty() && self.degradation.shift.len() != d {
            return Err(FlowError::ShapeMismatch {
                expected: vec![d],
                actual: vec![self.degradation.shift.len()],
            });
        }
        if self.particles < 2 {
            return Err(invalid("particles", "need at least 2"));
        }
        if self.n_proj == 0 {
            return Err(invalid("n_proj", "must be >= 1"));
        }
        self.cfg.validate()
    }
}

/// One `(method, seed)` result. Failed cells carry `error` and NaN metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    pub seed: u64,
    pub t0: f64,
    pub lambda: f64,
    pub sliced_w2: f64,
    pub masked_mse: f64,
    pub runtime_ms: f64,
    pub error: Option<String>,
}

impl ReportRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Everything a cell produced, for callers that need more than the row.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub row: ReportRow,
    pub y: Tensor,
    pub reference: Tensor,
    pub restored: Option<Tensor>,
}

/// Fields shared by every cell of an experiment.
pub struct Prepared<'a> {
    spec: &'a ExperimentSpec,
    field: Box<dyn VelocityField + 'a>,
    source: Option<AnalyticGmmField>,
}

impl<'a> Prepared<'a> {
    pub fn new(spec: &'a ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        let field = Box::new(AnalyticGmmField::new(spec.target.clone()).with_schedule(spec.cfg.schedule));
        let source = if spec.methods.contains(&Method::FlowEdit) {
            let degraded = spec.degradation.degraded_spec(&spec.target)?;
            Some(AnalyticGmmField::new(degraded).with_schedule(spec.cfg.schedule))
        } else {
            None
        };
        Ok(Self { spec, field, source })
    }

    /// Restores with `field` (a trained field, say) instead of the
    /// analytic target field. Scoring still uses the target samples.
    pub fn with_field(mut self, field: Box<dyn VelocityField + 'a>) -> Result<Self> {
        if field.dim() != self.spec.target.dim() {
            return Err(FlowError::ShapeMismatch {
                expected: vec![self.spec.target.dim()],
                actual: vec![field.dim()],
            });
        }
        self.field = field;
        Ok(self)
    }

    pub fn run_cell(&self, method: Method, seed: u64) -> Result<CellOutput> {
        let spec = self.spec;
        let root = SeededRng::new(seed, 0);
        let y = spec.degradation.apply(&spec.target, &mut root.split(0), spec.particles)?;
        let reference = spec.target.sample(&mut root.split(2), spec.particles)?;
        let cfg = SamplerConfig {
            method,
            seed,
            ..spec.cfg.clone()
        };
        let source = self.source.as_ref().map(|s| s as &dyn VelocityField);

        let start = Instant::now();
        let restored = restore(self.field.as_ref(), source, &y, Some(&spec.mask), &cfg, &mut root.split(1));
        let runtime_ms = start.elapsed().as_secs_f64() * 1e3;

        let mut row = ReportRow {
            method,
            seed,
            t0: cfg.t0,
            lambda: cfg.lambda,
            sliced_w2: f64::NAN,
            masked_mse: f64::NAN,
            runtime_ms,
            error: None,
        };
        let restored = match restored {
            Ok((x, _)) => {
                row.sliced_w2 = sliced_wasserstein(&x, &reference, spec.n_proj, &mut root.split(3))?;
                row.masked_mse = masked_mse(&x, &y, &spec.mask)?;
                Some(x)
            }
            Err(e) => {
                row.error = Some(e.to_string());
                None
            }
        };
        Ok(CellOutput {
            row,
            y,
            reference,
            restored,
        })
    }
}

/// Runs every `(method, seed)` cell, method-major. Cells run in parallel on
/// the current rayon pool; the rows do not depend on the pool size. A
/// sampler failure becomes an error row; invalid specs fail the whole run.
pub fn run_restoration_experiment(spec: &ExperimentSpec) -> Result<Vec<ReportRow>> {
    let prepared = Prepared::new(spec)?;
    let cells: Vec<(Method, u64)> = spec
        .methods
        .iter()
        .flat_map(|&m| spec.seeds.iter().map(move |&s| (m, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(m, s)| prepared.run_cell(m, s).map(|c| c.row))
        .collect()
}

/// [`run_restoration_experiment`] once per `t0`, concatenated in order.
pub fn t0_sweep(spec: &ExperimentSpec, t0_values: &[f64]) -> Result<Vec<ReportRow>> {
    if let Some(bad) = t0_values.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(invalid("t0", format!("{bad} is outside (0, 1]")));
    }
    let mut rows = Vec::new();
    for &t0 in t0_values {
        let spec = ExperimentSpec {
            cfg: SamplerConfig { t0, ..spec.cfg.clone() },
            ..spec.clone()
        };
        rows.extend(run_restoration_experiment(&spec)?);
    }
    Ok(rows)
}

/// Sliced distance between two independent draws of `target`.
pub fn noise_floor(target: &GmmSpec, particles: usize, n_proj: usize, seed: u64) -> Result<f64> {
    let root = SeededRng::new(seed, 1);
    let a = target.sample(&mut root.split(0), particles)?;
    let b = target.sample(&mut root.split(1), particles)?;
    sliced_wasserstein(&a, &b, n_proj, &mut root.split(2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub method: Method,
    pub t0: f64,
    pub lambda: f64,
    pub runs: usize,
    pub errors: usize,
    pub mean_sliced_w2: f64,
    pub mean_masked_mse: f64,
}

/// Means over seeds for each `(method, t0, lambda)` group, in first-seen
/// order. Error rows are counted but not averaged.
pub fn summarize(rows: &[ReportRow]) -> Vec<Summary> {
    let mut out: Vec<Summary> = Vec::new();
    for row in rows {
        let idx = match out
            .iter()
            .position(|s| s.method == row.method && s.t0 == row.t0 && s.lambda == row.lambda)
        {
            Some(i) => i,
            None => {
                out.push(Summary {
                    method: row.method,
                    t0: row.t0,
                    lambda: row.lambda,
                    runs: 0,
                    errors: 0,
                    mean_sliced_w2: 0.0,
                    mean_masked_mse: 0.0,
                });
                out.len() - 1
            }
        };
        let s = &mut out[idx];
        if row.is_ok() {
            s.runs += 1;
            s.mean_sliced_w2 += row.sliced_w2;
            s.mean_masked_mse += row.masked_mse;
        } else {
            s.errors += 1;
        }
    }
    for s in &mut out {
        if s.runs > 0 {
            s.mean_sliced_w2 /= s.runs as f64;
            s.mean_masked_mse /= s.runs as f64;
        } else {
            s.mean_sliced_w2 = f64::NAN;
            s.mean_masked_mse = f64::NAN;
        }
    }
    out
}

/// Writes the report CSV. Wall-clock time is nondeterministic, so
/// `runtime_ms` is written as 0 unless `with_timing` is set. Error rows
/// leave the metric fields empty.
pub fn write_csv<W: Write>(rows: &[ReportRow], out: W, with_timing: bool) -> Result<()> {
    let csv_err = |e: csv::Error| FlowError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        let metric = |v: f64| if r.is_ok() { v.to_string() } else { String::new() };
        let runtime = if with_timing { format!("{:.3}", r.runtime_ms) } else { "0".into() };
        w.write_record([
            r.method.name().to_string(),
            r.seed.to_string(),
            r.t0.to_string(),
            r.lambda.to_string(),
            metric(r.sliced_w2),
            metric(r.masked_mse),
            runtime,
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
