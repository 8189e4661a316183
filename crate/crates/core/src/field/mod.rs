//! Velocity fields for rectified flow on the path
//! `x_t = (1 - sigma_t) x_0 + sigma_t x_1`, `x_1 ~ N(0, I)`.
//!
//! Three kinds of providers live here: closed-form optimal fields for
//! Gaussian and Gaussian-mixture data ([`gaussian`]), a kernel-regression
//! Monte-Carlo oracle for the same conditional expectation ([`oracle`]),
//! and a small tanh MLP trained with the flow-matching loss ([`mlp`]).

pub mod gaussian;
pub mod mlp;
pub mod oracle;

use crate::error::{invalid, FlowError, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub use gaussian::{AnalyticGaussianField, AnalyticGmmField, GaussianSpec, GmmSpec};
pub use mlp::{fm_loss, train_mlp_field, train_mlp_field_with, FmBatch, MlpField, TrainConfig};
pub use oracle::{mc_oracle_velocity, KernelEstimator, McEstimate, McOracle};

/// Maps `t` to the interpolation weight `sigma_t`.
///
/// `shift = 1` is the plain rectified-flow path `sigma_t = t`. Larger
/// shifts use `s t / (1 + (s - 1) t)`, which keeps both endpoints fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    shift: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear()
    }
}

impl NoiseSchedule {
    pub fn linear() -> Self {
        Self { shift: 1.0 }
    }

    pub fn shifted(shift: f64) -> Result<Self> {
        if !(shift >= 1.0 && shift.is_finite()) {
            return Err(invalid("shift", format!("{shift} must be finite and >= 1")));
        }
        Ok(Self { shift })
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(invalid("t", format!("{t} is outside [0, 1]")));
        }
        if self.shift == 1.0 {
            return Ok(t);
        }
        Ok(self.shift * t / (1.0 + (self.shift - 1.0) * t))
    }
}

/// An evaluable map `(x, t) -> v`.
pub trait VelocityField: Send + Sync {
    fn dim(&self) -> usize;

    /// Velocity at a single point.
    fn velocity_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()>;

    /// Row-wise evaluation over a `[n, d]` batch. Implementations with
    /// per-`t` setup cost override this.
    fn velocity_batch(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        let d = self.dim();
        let mut out = vec![0.0; x.len()];
        for (row, dst) in x.rows().zip(out.chunks_exact_mut(d)) {
            self.velocity_into(row, t, dst)?;
        }
        Ok(Tensor::from_raw(x.shape().to_vec(), out))
    }
}

/// Evaluates `field` on a `[d]` point or a `[n, d]` batch.
pub fn eval_field(field: &dyn VelocityField, x: &Tensor, t: f64) -> Result<Tensor> {
    let d = field.dim();
    if x.row_len() != d || x.ndim() > 2 {
        let mut expected = x.shape().to_vec();
        *expected.last_mut().unwrap() = d;
        return Err(FlowError::ShapeMismatch {
            expected,
            actual: x.shape().to_vec(),
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid("t", format!("{t} is outside [0, 1]")));
    }
    field.velocity_batch(x, t)
}

/// Mean Euclidean distance between two 2-D fields over an `n x n` grid on
/// `[lo, hi]^2`, averaged over `times`.
pub fn grid_error(
    a: &dyn VelocityField,
    b: &dyn VelocityField,
    lo: f64,
    hi: f64,
    n: usize,
    times: &[f64],
) -> Result<f64> {
    if a.dim() != 2 || b.dim() != 2 {
        return Err(FlowError::UnsupportedDimension(a.dim().max(b.dim())));
    }
    if n < 2 || !(hi > lo) || times.is_empty() {
        return Err(invalid("grid", "need n >= 2, hi > lo and at least one time"));
    }
    let step = (hi - lo) / (n - 1) as f64;
    let mut pts = Vec::with_capacity(n * n * 2);
    for i in 0..n {
        for j in 0..n {
            pts.push(lo + step * i as f64);
            pts.push(lo + step * j as f64);
        }
    }
    let grid = Tensor::from_rows(n * n, 2, pts)?;
    let mut total = 0.0;
    for &t in times {
        let va = eval_field(a, &grid, t)?;
        let vb = eval_field(b, &grid, t)?;
        for (ra, rb) in va.rows().zip(vb.rows()) {
            total += ra.iter().zip(rb).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        }
    }
    Ok(total / (n * n * times.len()) as f64)
}

/// Field that is identically zero. Useful for isolating sampler mechanics.
#[derive(Debug, Clone, Copy)]
pub struct ZeroField {
    pub dim: usize,
}

impl VelocityField for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity_into(&self, _x: &[f64], _t: f64, out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
}

/// Wraps a closure as a velocity field.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VelocityField for FnField<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        (self.f)(x, t, out);
        Ok(())
    }
}

/// Sampler for a data distribution `p(x_0)`.
pub trait DataSampler: Send + Sync {
    fn dim(&self) -> usize;

    /// `n` draws as a `[n, d]` tensor.
    fn sample(&self, rng: &mut SeededRng, n: usize) -> Result<Tensor>;
}

/// Gradient of a log-density, `x -> grad log p(x)`.
pub trait ScoreField: Send + Sync {
    fn dim(&self) -> usize;
    fn score_into(&self, x: &[f64], out: &mut [f64]);
}

/// Closure-backed score.
pub struct FnScore<F> {
    dim: usize,
    f: F,
}

impl<F> FnScore<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> ScoreField for FnScore<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

/// Score of the standard normal, `-x`.
pub fn standard_normal_score(dim: usize) -> impl ScoreField {
    FnScore::new(dim, |x: &[f64], out: &mut [f64]| {
        for (o, v) in out.iter_mut().zip(x) {
            *o = -v;
        }
    })
}
