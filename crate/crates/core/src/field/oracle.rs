//! Brute-force Monte-Carlo estimate of `E[x_1 - x_0 | x_t = x]`.
//!
//! Pairs `(x_0, x_1)` are simulated from the data sampler and the standard
//! normal, pushed through the interpolation path, and the conditional mean
//! is read off with a Gaussian-kernel regression. This path shares no code
//! with the closed-form fields it is used to check.
//!
//! Two kernel estimators are available. [`KernelEstimator::NadarayaWatson`]
//! is the locally constant fit; its smoothing bias grows with the slope of
//! the conditional mean and with the slope of the `x_t` density, and at
//! 10^5 pairs it is larger than the reported standard error. The default
//! [`KernelEstimator::LocalLinear`] fits an intercept plus a local slope,
//! which removes both first-order bias terms and leaves only curvature bias.

use nalgebra::DMatrix;

use super::{DataSampler, NoiseSchedule};
use crate::error::{invalid, FlowError, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const MIN_PAIRS: usize = 1000;
pub const MIN_EFFECTIVE_SAMPLES: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelEstimator {
    NadarayaWatson,
    #[default]
    LocalLinear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: Tensor,
    pub stderr: Tensor,
    pub effective_samples: f64,
}

impl McEstimate {
    /// Euclidean norm of the per-coordinate standard errors.
    pub fn stderr_norm(&self) -> f64 {
        self.stderr.data().iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

/// Simulated path points at a fixed `t`, reusable across query points.
pub struct McOracle {
    dim: usize,
    points: Vec<f64>,
    targets: Vec<f64>,
    bandwidth: f64,
    estimator: KernelEstimator,
}

impl McOracle {
    pub fn simulate(
        sampler: &dyn DataSampler,
        t: f64,
        n: usize,
        rng: &mut SeededRng,
        schedule: NoiseSchedule,
    ) -> Result<Self> {
        if n < MIN_PAIRS {
            return Err(invalid("n", format!("{n} < {MIN_PAIRS} pairs")));
        }
        let sigma = schedule.sigma(t)?;
        let dim = sampler.dim();
        let x0 = sampler.sample(rng, n)?;
        let mut noise = vec![0.0; n * dim];
        rng.fill_standard_normal(&mut noise);
        let mut points = Vec::with_capacity(n * dim);
        let mut targets = Vec::with_capacity(n * dim);
        for (a, b) in x0.data().iter().zip(&noise) {
            points.push((1.0 - sigma) * a + sigma * b);
            targets.push(b - a);
        }
        let mut oracle = Self {
            dim,
            points,
            targets,
            bandwidth: 1.0,
            estimator: KernelEstimator::default(),
        };
        oracle.bandwidth = 0.2 * oracle.marginal_std();
        Ok(oracle)
    }

    /// Pooled per-coordinate standard deviation of the simulated `x_t`.
    pub fn marginal_std(&self) -> f64 {
        let n = (self.points.len() / self.dim) as f64;
        let mut total = 0.0;
        for c in 0..self.dim {
            let col = self.points.iter().skip(c).step_by(self.dim);
            let mean = col.clone().sum::<f64>() / n;
            total += col.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        }
        (total / self.dim as f64).sqrt()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn with_bandwidth(mut self, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(invalid("bandwidth", format!("{bandwidth} must be positive")));
        }
        self.bandwidth = bandwidth;
        Ok(self)
    }

    pub fn with_estimator(mut self, estimator: KernelEstimator) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn estimator(&self) -> KernelEstimator {
        self.estimator
    }

    pub fn query(&self, x: &[f64]) -> Result<McEstimate> {
        if x.len() != self.dim {
            return Err(FlowError::ShapeMismatch {
                expected: vec![self.dim],
                actual: vec![x.len()],
            });
        }
        let d = self.dim;
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let log_w: Vec<f64> = self
            .points
            .chunks_exact(d)
            .map(|p| -p.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * inv)
            .collect();
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let sum_w: f64 = w.iter().sum();
        let sum_w2: f64 = w.iter().map(|v| v * v).sum();
        let ess = if sum_w2 > 0.0 { sum_w * sum_w / sum_w2 } else { 0.0 };
        if !(ess >= MIN_EFFECTIVE_SAMPLES) {
            return Err(FlowError::InsufficientData {
                ess,
                min: MIN_EFFECTIVE_SAMPLES,
            });
        }
        let (mean, stderr) = match self.estimator {
            KernelEstimator::NadarayaWatson => self.nadaraya_watson(&w),
            KernelEstimator::LocalLinear => self.local_linear(x, &w)?,
        };
        Ok(McEstimate {
            mean: Tensor::from_vec(mean)?,
            stderr: Tensor::from_vec(stderr)?,
            effective_samples: ess,
        })
    }

    fn nadaraya_watson(&self, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let sum_w: f64 = w.iter().sum();
        let mut mean = vec![0.0; d];
        for (wi, u) in w.iter().zip(self.targets.chunks_exact(d)) {
            for (m, ui) in mean.iter_mut().zip(u) {
                *m += wi * ui;
            }
        }
        mean.iter_mut().for_each(|m| *m /= sum_w);
        let mut var = vec![0.0; d];
        for (wi, u) in w.iter().zip(self.targets.chunks_exact(d)) {
            for ((s, ui), m) in var.iter_mut().zip(u).zip(&mean) {
                *s += wi * wi * (ui - m).powi(2);
            }
        }
        let stderr = var.iter().map(|s| s.sqrt() / sum_w).collect();
        (mean, stderr)
    }

    /// Weighted least squares on `[1, p - x]`; the intercept is the estimate
    /// and its standard error comes from the equivalent-kernel weights.
    fn local_linear(&self, x: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.dim;
        let k = d + 1;
        let design = |p: &[f64], row: &mut [f64]| {
            row[0] = 1.0;
            for ((r, a), b) in row[1..].iter_mut().zip(p).zip(x) {
                *r = a - b;
            }
        };
        let mut gram = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DMatrix::<f64>::zeros(k, d);
        let mut row = vec![0.0; k];
        for ((wi, p), u) in w.iter().zip(self.points.chunks_exact(d)).zip(self.targets.chunks_exact(d)) {
            if *wi == 0.0 {
                continue;
            }
            design(p, &mut row);
            for a in 0..k {
                for b in 0..k {
                    gram[(a, b)] += wi * row[a] * row[b];
                }
                for c in 0..d {
                    rhs[(a, c)] += wi * row[a] * u[c];
                }
            }
        }
        let inv = gram
            .try_inverse()
            .ok_or_else(|| FlowError::IllConditioned("local-linear normal equations".into()))?;
        let beta = &inv * &rhs;
        let lead = inv.row(0).into_owned();
        let mut var = vec![0.0; d];
        for ((wi, p), u) in w.iter().zip(self.points.chunks_exact(d)).zip(self.targets.chunks_exact(d)) {
            if *wi == 0.0 {
                continue;
            }
            design(p, &mut row);
            let l = wi * (0..k).map(|a| lead[a] * row[a]).sum::<f64>();
            for c in 0..d {
                let fit = (0..k).map(|a| row[a] * beta[(a, c)]).sum::<f64>();
                var[c] += l * l * (u[c] - fit).powi(2);
            }
        }
        let mean = (0..d).map(|c| beta[(0, c)]).collect();
        Ok((mean, var.iter().map(|v| v.sqrt()).collect()))
    }
}

/// One-shot oracle query. `bandwidth = None` uses 0.2 x marginal std.
pub fn mc_oracle_velocity(
    sampler: &dyn DataSampler,
    x: &Tensor,
    t: f64,
    n: usize,
    bandwidth: Option<f64>,
    rng: &mut SeededRng,
) -> Result<McEstimate> {
    let mut oracle = McOracle::simulate(sampler, t, n, rng, NoiseSchedule::linear())?;
    if let Some(h) = bandwidth {
        oracle = oracle.with_bandwidth(h)?;
    }
    oracle.query(x.data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GaussianSpec;

    #[test]
    fn symmetric_target_gives_zero_at_origin() {
        let spec = GaussianSpec::standard(2).unwrap();
        let mut rng = SeededRng::new(1, 0);
        let x = Tensor::zeros(&[2]).unwrap();
        let est = mc_oracle_velocity(&spec, &x, 0.5, 100_000, None, &mut rng).unwrap();
        for (m, s) in est.mean.data().iter().zip(est.stderr.data()) {
            assert!(m.abs() < 3.0 * s, "mean {m} stderr {s}");
        }
    }

    #[test]
    fn tiny_bandwidth_is_insufficient() {
        let spec = GaussianSpec::standard(1).unwrap();
        let mut rng = SeededRng::new(2, 0);
        let x = Tensor::from_vec(vec![1.0]).unwrap();
        let err = mc_oracle_velocity(&spec, &x, 0.5, 1000, Some(1e-6), &mut rng).unwrap_err();
        assert!(matches!(err, FlowError::InsufficientData { .. }));
    }

    #[test]
    fn rejects_small_runs_and_bad_bandwidth() {
        let spec = GaussianSpec::standard(1).unwrap();
        let mut rng = SeededRng::new(2, 0);
        let x = Tensor::from_vec(vec![1.0]).unwrap();
        assert!(mc_oracle_velocity(&spec, &x, 0.5, 999, None, &mut rng).is_err());
        assert!(mc_oracle_velocity(&spec, &x, 0.5, 1000, Some(0.0), &mut rng).is_err());
    }
}
