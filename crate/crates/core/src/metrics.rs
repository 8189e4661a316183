use crate::error::{invalid, FlowError, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const DEFAULT_PROJECTIONS: usize = 128;

fn check_samples(name: &'static str, x: &Tensor) -> Result<()> {
    if x.ndim() != 2 {
        return Err(invalid(name, format!("expected [n, d] samples, got shape {:?}", x.shape())));
    }
    if x.n_rows() < 2 {
        return Err(invalid(name, "need at least 2 samples"));
    }
    Ok(())
}

/// Exact 2-Wasserstein distance between two sorted 1-D empirical laws,
/// integrating the squared quantile difference over the merged breakpoints.
pub fn wasserstein_1d_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == m {
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        return (s / n as f64).sqrt();
    }
    // Quantile breakpoints in units of 1 / (n m): a steps every m, b every n.
    let (mut i, mut j, mut u) = (0usize, 0usize, 0usize);
    let mut acc = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) * m;
        let next_b = (j + 1) * n;
        let next = next_a.min(next_b);
        let d = a[i] - b[j];
        acc += (next - u) as f64 * d * d;
        u = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    (acc / (n * m) as f64).sqrt()
}

fn project_sorted(x: &Tensor, dir: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = x
        .rows()
        .map(|r| r.iter().zip(dir).map(|(a, b)| a * b).sum())
        .collect();
    p.sort_by(f64::total_cmp);
    p
}

/// Mean over `n_proj` random unit directions of the 1-D 2-Wasserstein
/// distance between the projected samples.
pub fn sliced_wasserstein(a: &Tensor, b: &Tensor, n_proj: usize, rng: &mut SeededRng) -> Result<f64> {
    check_samples("a", a)?;
    check_samples("b", b)?;
    if a.row_len() != b.row_len() {
        return Err(FlowError::ShapeMismatch {
            expected: vec![b.n_rows(), a.row_len()],
            actual: b.shape().to_vec(),
        });
    }
    if n_proj == 0 {
        return Err(invalid("n_proj", "must be >= 1"));
    }
    let d = a.row_len();
    let mut total = 0.0;
    let mut dir = vec![0.0; d];
    for _ in 0..n_proj {
        loop {
            rng.fill_standard_normal(&mut dir);
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                dir.iter_mut().for_each(|v| *v /= norm);
                break;
            }
        }
        total += wasserstein_1d_sorted(&project_sorted(a, &dir), &project_sorted(b, &dir));
    }
    Ok(total / n_proj as f64)
}

/// Mean squared difference over the coordinates where `mask` is nonzero.
/// `mask` may have `x`'s shape or be a single `[d]` row shared by all rows.
pub fn masked_mse(x: &Tensor, y: &Tensor, mask: &Tensor) -> Result<f64> {
    x.ensure_same_shape(y)?;
    let mask = mask.expand_rows_like(x)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((a, b), m) in x.data().iter().zip(y.data()).zip(mask.data()) {
        if *m != 0.0 {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    if count == 0 {
        return Err(invalid("mask", "selects no coordinates"));
    }
    Ok(sum / count as f64)
}

/// Sample mean `[d]` and unbiased covariance `[d, d]`.
pub fn empirical_moments(samples: &Tensor) -> Result<(Tensor, Tensor)> {
    check_samples("samples", samples)?;
    let n = samples.n_rows();
    let d = samples.row_len();
    let mut mean = vec![0.0; d];
    for row in samples.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    for row in samples.rows() {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let c = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = c;
            cov[j * d + i] = c;
        }
    }
    Ok((Tensor::from_vec(mean)?, Tensor::from_rows(d, d, cov)?))
}
