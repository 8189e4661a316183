use crate::error::{invalid, FlowError, Result};
use crate::field::ScoreField;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::DIVERGENCE_LIMIT;

/// Euler–Maruyama iteration of `dx = 1/2 grad log p(x) dt + dw`:
/// `x <- x + (h / 2) score(x) + sqrt(h) eps`, applied to every row.
pub fn langevin_stationarity_run(
    score: &dyn ScoreField,
    samples: &Tensor,
    h: f64,
    steps: usize,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid("h", format!("{h} must be positive")));
    }
    let d = score.dim();
    if samples.row_len() != d {
        return Err(FlowError::ShapeMismatch {
            expected: vec![samples.n_rows(), d],
            actual: samples.shape().to_vec(),
        });
    }
    let mut x = samples.clone();
    let mut s = vec![0.0; d];
    let mut noise = vec![0.0; x.len()];
    let sqrt_h = h.sqrt();
    for step in 0..steps {
        rng.fill_standard_normal(&mut noise);
        for (row, eps) in x.rows_mut().zip(noise.chunks_exact(d)) {
            score.score_into(row, &mut s);
            for ((xi, si), ei) in row.iter_mut().zip(&s).zip(eps) {
                *xi += 0.5 * h * si + sqrt_h * ei;
            }
        }
        let m = x.max_abs();
        if !(m <= DIVERGENCE_LIMIT) {
            return Err(FlowError::Diverged {
                step,
                t: step as f64 * h,
                reason: format!("|x| = {m:e}"),
            });
        }
    }
    Ok(x)
}
