//! Closed-form optimal velocity for Gaussian and Gaussian-mixture data.
//!
//! With `a = 1 - sigma_t`, `b = sigma_t` and data `x_0 ~ N(mu, Sigma)`, the
//! marginal of `x_t` is `N(a mu, S)` with `S = a^2 Sigma + b^2 I`, and
//!
//! ```text
//! E[x_0 | x_t = x] = mu + a Sigma S^-1 (x - a mu)
//! E[x_1 | x_t = x] = b S^-1 (x - a mu)
//! v*(x, t)         = E[x_1 | x] - E[x_0 | x] = (b I - a Sigma) S^-1 (x - a mu) - mu
//! ```
//!
//! `S` stays positive-definite on the whole closed interval, so `t = 0` and
//! `t = 1` need no special casing. Mixtures weight the per-component fields
//! by responsibilities computed in log space.

use nalgebra::{DMatrix, DVector};

use super::{DataSampler, NoiseSchedule, ScoreField, VelocityField};
use crate::error::{invalid, FlowError, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    cov_inv: DMatrix<f64>,
}

impl GaussianSpec {
    /// `mean` is `[d]`, `covariance` is `[d, d]`, symmetric to 1e-12 and
    /// positive-definite.
    pub fn new(mean: &Tensor, covariance: &Tensor) -> Result<Self> {
        if mean.ndim() != 1 {
            return Err(FlowError::InvalidShape(mean.shape().to_vec()));
        }
        let d = mean.len();
        if covariance.shape() != [d, d] {
            return Err(FlowError::ShapeMismatch {
                expected: vec![d, d],
                actual: covariance.shape().to_vec(),
            });
        }
        let cov = DMatrix::from_row_slice(d, d, covariance.data());
        for i in 0..d {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 {
                    return Err(invalid("covariance", "not symmetric"));
                }
            }
        }
        let min_eig = cov.clone().symmetric_eigenvalues().min();
        if min_eig <= 0.0 {
            return Err(invalid(
                "covariance",
                format!("not positive-definite (min eigenvalue {min_eig:e})"),
            ));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| FlowError::IllConditioned("covariance Cholesky failed".into()))?;
        let cov_inv = chol.inverse();
        Ok(Self {
            mean: DVector::from_column_slice(mean.data()),
            chol: chol.l(),
            cov,
            cov_inv,
        })
    }

    /// `N(mean, std^2 I)`.
    pub fn isotropic(mean: &[f64], std: f64) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(invalid("mean", "empty"));
        }
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = std * std;
        }
        Self::new(&Tensor::from_vec(mean.to_vec())?, &Tensor::from_rows(d, d, cov)?)
    }

    pub fn standard(dim: usize) -> Result<Self> {
        Self::isotropic(&vec![0.0; dim], 1.0)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// The law of `A x + shift` for `x` drawn from this spec. `jitter` is
    /// added to the diagonal to keep rank-deficient maps positive-definite.
    pub fn affine(&self, map: &DMatrix<f64>, shift: &[f64], jitter: f64) -> Result<Self> {
        let d = self.dim();
        if map.shape() != (d, d) || shift.len() != d {
            return Err(invalid("map", "dimension mismatch"));
        }
        let mean = map * &self.mean + DVector::from_column_slice(shift);
        let mut cov = map * &self.cov * map.transpose();
        cov = (&cov + cov.transpose()) * 0.5;
        for i in 0..d {
            cov[(i, i)] += jitter;
        }
        Self::new(
            &Tensor::from_vec(mean.as_slice().to_vec())?,
            &Tensor::from_rows(d, d, cov.transpose().as_slice().to_vec())?,
        )
    }

    fn conditioned(&self, a: f64, b: f64) -> Result<Conditioned> {
        let d = self.dim();
        let s = &self.cov * (a * a) + DMatrix::identity(d, d) * (b * b);
        let chol = s
            .cholesky()
            .ok_or_else(|| FlowError::IllConditioned(format!("marginal covariance at a={a}")))?;
        let s_inv = chol.inverse();
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let drift = (DMatrix::identity(d, d) * b - &self.cov * a) * &s_inv;
        Ok(Conditioned {
            center: &self.mean * a,
            mean: self.mean.clone(),
            drift,
            s_inv,
            log_norm: -0.5 * (log_det + d as f64 * LN_2PI),
        })
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let c = self
            .conditioned(1.0, 0.0)
            .expect("covariance validated at construction");
        c.log_density(x)
    }
}

/// Per-`t` precomputation for one Gaussian component.
struct Conditioned {
    center: DVector<f64>,
    mean: DVector<f64>,
    drift: DMatrix<f64>,
    s_inv: DMatrix<f64>,
    log_norm: f64,
}

impl Conditioned {
    fn velocity(&self, x: &[f64], out: &mut [f64]) {
        let r = DVector::from_column_slice(x) - &self.center;
        let v = &self.drift * r - &self.mean;
        out.copy_from_slice(v.as_slice());
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let r = DVector::from_column_slice(x) - &self.center;
        self.log_norm - 0.5 * r.dot(&(&self.s_inv * &r))
    }
}

impl DataSampler for GaussianSpec {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, rng: &mut SeededRng, n: usize) -> Result<Tensor> {
        let d = self.dim();
        let mut out = Vec::with_capacity(n * d);
        let mut z = DVector::zeros(d);
        for _ in 0..n {
            rng.fill_standard_normal(z.as_mut_slice());
            let x = &self.chol * &z + &self.mean;
            out.extend_from_slice(x.as_slice());
        }
        Tensor::from_rows(n, d, out)
    }
}

impl ScoreField for GaussianSpec {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        let r = DVector::from_column_slice(x) - &self.mean;
        let s = -(&self.cov_inv * r);
        out.copy_from_slice(s.as_slice());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmSpec {
    weights: Vec<f64>,
    components: Vec<GaussianSpec>,
}

impl GmmSpec {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianSpec>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("components", "at least one component required"));
        }
        if weights.len() != components.len() {
            return Err(invalid("weights", "one weight per component required"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("weights", "must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("weights", format!("sum to {total}, not 1")));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(invalid("components", "dimension mismatch"));
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn single(component: GaussianSpec) -> Self {
        Self {
            weights: vec![1.0],
            components: vec![component],
        }
    }

    /// Equal-weight isotropic mixture.
    pub fn isotropic(means: &[Vec<f64>], std: f64) -> Result<Self> {
        let k = means.len();
        let comps = means
            .iter()
            .map(|m| GaussianSpec::isotropic(m, std))
            .collect::<Result<Vec<_>>>()?;
        Self::new(vec![1.0 / k as f64; k], comps)
    }

    /// Two equal-weight isotropic modes at `+mode` and `-mode`.
    pub fn symmetric_pair(mode: &[f64], std: f64) -> Result<Self> {
        let neg: Vec<f64> = mode.iter().map(|v| -v).collect();
        Self::isotropic(&[mode.to_vec(), neg], std)
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianSpec] {
        &self.components
    }

    /// Applies `x -> A x + shift` to every component.
    pub fn affine(&self, map: &DMatrix<f64>, shift: &[f64], jitter: f64) -> Result<Self> {
        let comps = self
            .components
            .iter()
            .map(|c| c.affine(map, shift, jitter))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.weights.clone(), comps)
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.log_density(x))
            .collect();
        log_sum_exp(&terms)
    }

    fn component_index(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.weights.len() - 1
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl DataSampler for GmmSpec {
    fn dim(&self) -> usize {
        GmmSpec::dim(self)
    }

    fn sample(&self, rng: &mut SeededRng, n: usize) -> Result<Tensor> {
        let d = self.dim();
        let mut out = Vec::with_capacity(n * d);
        let mut z = DVector::zeros(d);
        for _ in 0..n {
            let c = &self.components[self.component_index(rng.uniform())];
            rng.fill_standard_normal(z.as_mut_slice());
            let x = &c.chol * &z + &c.mean;
            out.extend_from_slice(x.as_slice());
        }
        Tensor::from_rows(n, d, out)
    }
}

impl ScoreField for GmmSpec {
    fn dim(&self) -> usize {
        GmmSpec::dim(self)
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        let logs: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.log_density(x))
            .collect();
        let lse = log_sum_exp(&logs);
        out.fill(0.0);
        let mut s = vec![0.0; out.len()];
        for (c, l) in self.components.iter().zip(&logs) {
            let r = (l - lse).exp();
            c.score_into(x, &mut s);
            for (o, v) in out.iter_mut().zip(&s) {
                *o += r * v;
            }
        }
    }
}

/// Optimal rectified-flow velocity for Gaussian data.
#[derive(Debug, Clone)]
pub struct AnalyticGaussianField {
    spec: GaussianSpec,
    schedule: NoiseSchedule,
}

impl AnalyticGaussianField {
    pub fn new(spec: GaussianSpec) -> Self {
        Self {
            spec,
            schedule: NoiseSchedule::linear(),
        }
    }

    pub fn with_schedule(mut self, schedule: NoiseSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    fn conditioned(&self, t: f64) -> Result<Conditioned> {
        let s = self.schedule.sigma(t)?;
        self.spec.conditioned(1.0 - s, s)
    }
}

impl VelocityField for AnalyticGaussianField {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn velocity_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        self.conditioned(t)?.velocity(x, out);
        Ok(())
    }

    fn velocity_batch(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        let c = self.conditioned(t)?;
        let d = self.dim();
        let mut out = vec![0.0; x.len()];
        for (row, dst) in x.rows().zip(out.chunks_exact_mut(d)) {
            c.velocity(row, dst);
        }
        Ok(Tensor::from_raw(x.shape().to_vec(), out))
    }
}

/// Optimal rectified-flow velocity for mixture data.
#[derive(Debug, Clone)]
pub struct AnalyticGmmField {
    spec: GmmSpec,
    schedule: NoiseSchedule,
}

impl AnalyticGmmField {
    pub fn new(spec: GmmSpec) -> Self {
        Self {
            spec,
            schedule: NoiseSchedule::linear(),
        }
    }

    pub fn with_schedule(mut self, schedule: NoiseSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn spec(&self) -> &GmmSpec {
        &self.spec
    }

    fn conditioned(&self, t: f64) -> Result<Vec<(f64, Conditioned)>> {
        let s = self.schedule.sigma(t)?;
        self.spec
            .weights
            .iter()
            .zip(&self.spec.components)
            .map(|(w, c)| Ok((w.ln(), c.conditioned(1.0 - s, s)?)))
            .collect()
    }

    fn mix(parts: &[(f64, Conditioned)], x: &[f64], out: &mut [f64], scratch: &mut [f64]) -> Result<()> {
        if let [(_, only)] = parts {
            only.velocity(x, out);
            return Ok(());
        }
        let mut logs = [0.0f64; 16];
        let mut heap;
        let logs: &mut [f64] = if parts.len() <= logs.len() {
            &mut logs[..parts.len()]
        } else {
            heap = vec![0.0; parts.len()];
            &mut heap
        };
        for (l, (lw, c)) in logs.iter_mut().zip(parts) {
            *l = lw + c.log_density(x);
        }
        let lse = log_sum_exp(logs);
        if !lse.is_finite() {
            return Err(FlowError::Degenerate(
                "all mixture responsibilities underflowed".into(),
            ));
        }
        out.fill(0.0);
        for (l, (_, c)) in logs.iter().zip(parts) {
            let r = (l - lse).exp();
            if r == 0.0 {
                continue;
            }
            c.velocity(x, scratch);
            for (o, v) in out.iter_mut().zip(scratch.iter()) {
                *o += r * v;
            }
        }
        Ok(())
    }
}

impl VelocityField for AnalyticGmmField {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn velocity_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let parts = self.conditioned(t)?;
        let mut scratch = vec![0.0; out.len()];
        Self::mix(&parts, x, out, &mut scratch)
    }

    fn velocity_batch(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        let parts = self.conditioned(t)?;
        let d = self.dim();
        let mut out = vec![0.0; x.len()];
        let mut scratch = vec![0.0; d];
        for (row, dst) in x.rows().zip(out.chunks_exact_mut(d)) {
            Self::mix(&parts, row, dst, &mut scratch)?;
        }
        Ok(Tensor::from_raw(x.shape().to_vec(), out))
    }
}

/// Closed-form velocity of Gaussian data on the linear path.
pub fn analytic_gaussian_velocity(spec: &GaussianSpec, x: &Tensor, t: f64) -> Result<Tensor> {
    super::eval_field(&AnalyticGaussianField::new(spec.clone()), x, t)
}

/// Closed-form velocity of mixture data on the linear path.
pub fn analytic_gmm_velocity(spec: &GmmSpec, x: &Tensor, t: f64) -> Result<Tensor> {
    super::eval_field(&AnalyticGmmField::new(spec.clone()), x, t)
}
