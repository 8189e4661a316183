//! Ideal (sharp-cutoff) low/high-pass filtering in the DFT domain.
//!
//! The normalized frequency of DFT bin `k` in a length-`n` axis is
//! `min(k, n - k) / n`, i.e. cycles per sample in `[0, 0.5]`. For 2-D
//! signals the radial norm of the two per-axis frequencies is used. A bin
//! belongs to the low band iff its normalized frequency is `<= cutoff`;
//! the high band is the complement, so `low + high` reproduces the input.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, FlowError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    Low,
    High,
}

pub fn normalized_frequency(k: usize, n: usize) -> f64 {
    k.min(n - k) as f64 / n as f64
}

fn check_cutoff(cutoff: f64) -> Result<()> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(invalid("cutoff_fraction", format!("{cutoff} is outside (0, 1)")));
    }
    Ok(())
}

fn check_finite(signal: &Tensor) -> Result<()> {
    match signal.data().iter().position(|v| !v.is_finite()) {
        Some(i) => Err(FlowError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Reusable 1-D filter for a fixed length. Holds the FFT plans.
pub struct BandFilter {
    len: usize,
    cutoff: f64,
    low_bins: Vec<bool>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
}

impl BandFilter {
    pub fn new(len: usize, cutoff: f64) -> Result<Self> {
        check_cutoff(cutoff)?;
        if len == 0 {
            return Err(invalid("len", "must be positive"));
        }
        let mut planner = FftPlanner::new();
        let low_bins = (0..len)
            .map(|k| normalized_frequency(k, len) <= cutoff)
            .collect();
        Ok(Self {
            len,
            cutoff,
            low_bins,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            buf: vec![Complex64::default(); len],
        })
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// True when no bin falls in the high band (the filter is an identity).
    pub fn passes_everything(&self) -> bool {
        self.low_bins.iter().all(|&b| b)
    }

    /// Writes the requested band of `input` into `out`.
    pub fn apply(&mut self, input: &[f64], mode: FilterMode, out: &mut [f64]) {
        assert_eq!(input.len(), self.len);
        assert_eq!(out.len(), self.len);
        if self.passes_everything() {
            match mode {
                FilterMode::Low => out.copy_from_slice(input),
                FilterMode::High => out.fill(0.0),
            }
            return;
        }
        for (b, &v) in self.buf.iter_mut().zip(input) {
            *b = Complex64::new(v, 0.0);
        }
        self.forward.process(&mut self.buf);
        for (b, &is_low) in self.buf.iter_mut().zip(&self.low_bins) {
            let keep = match mode {
                FilterMode::Low => is_low,
                FilterMode::High => !is_low,
            };
            if !keep {
                *b = Complex64::default();
            }
        }
        self.inverse.process(&mut self.buf);
        let scale = 1.0 / self.len as f64;
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re * scale;
        }
    }
}

/// Filters a 1-D or 2-D signal.
pub fn frequency_filter(signal: &Tensor, cutoff_fraction: f64, mode: FilterMode) -> Result<Tensor> {
    check_cutoff(cutoff_fraction)?;
    check_finite(signal)?;
    match signal.ndim() {
        1 => {
            let mut f = BandFilter::new(signal.len(), cutoff_fraction)?;
            let mut out = vec![0.0; signal.len()];
            f.apply(signal.data(), mode, &mut out);
            Ok(Tensor::from_raw(signal.shape().to_vec(), out))
        }
        2 => filter_2d(signal, cutoff_fraction, mode),
        d => Err(FlowError::UnsupportedDimension(d)),
    }
}

fn filter_2d(signal: &Tensor, cutoff: f64, mode: FilterMode) -> Result<Tensor> {
    let (rows, cols) = (signal.shape()[0], signal.shape()[1]);
    let is_low = |r: usize, c: usize| {
        let fr = normalized_frequency(r, rows);
        let fc = normalized_frequency(c, cols);
        (fr * fr + fc * fc).sqrt() <= cutoff
    };
    let all_low = (0..rows).all(|r| (0..cols).all(|c| is_low(r, c)));
    if all_low {
        return Ok(match mode {
            FilterMode::Low => signal.clone(),
            FilterMode::High => Tensor::from_raw(signal.shape().to_vec(), vec![0.0; signal.len()]),
        });
    }

    let mut planner = FftPlanner::<f64>::new();
    let row_fwd = planner.plan_fft_forward(cols);
    let row_inv = planner.plan_fft_inverse(cols);
    let col_fwd = planner.plan_fft_forward(rows);
    let col_inv = planner.plan_fft_inverse(rows);

    let mut buf: Vec<Complex64> = signal.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut column = vec![Complex64::default(); rows];

    for row in buf.chunks_exact_mut(cols) {
        row_fwd.process(row);
    }
    transform_columns(&mut buf, rows, cols, &mut column, col_fwd.as_ref());
    for r in 0..rows {
        for c in 0..cols {
            let keep = match mode {
                FilterMode::Low => is_low(r, c),
                FilterMode::High => !is_low(r, c),
            };
            if !keep {
                buf[r * cols + c] = Complex64::default();
            }
        }
    }
    transform_columns(&mut buf, rows, cols, &mut column, col_inv.as_ref());
    for row in buf.chunks_exact_mut(cols) {
        row_inv.process(row);
    }
    let scale = 1.0 / (rows * cols) as f64;
    Ok(Tensor::from_raw(
        signal.shape().to_vec(),
        buf.iter().map(|b| b.re * scale).collect(),
    ))
}

fn transform_columns(
    buf: &mut [Complex64],
    rows: usize,
    cols: usize,
    column: &mut [Complex64],
    fft: &dyn Fft<f64>,
) {
    for c in 0..cols {
        for r in 0..rows {
            column[r] = buf[r * cols + c];
        }
        fft.process(column);
        for r in 0..rows {
            buf[r * cols + c] = column[r];
        }
    }
}

/// Filters every row of a `[n, d]` tensor as an independent 1-D signal.
pub fn filter_rows(batch: &Tensor, cutoff_fraction: f64, mode: FilterMode) -> Result<Tensor> {
    check_finite(batch)?;
    let d = batch.row_len();
    let mut f = BandFilter::new(d, cutoff_fraction)?;
    let mut out = vec![0.0; batch.len()];
    for (src, dst) in batch.rows().zip(out.chunks_exact_mut(d)) {
        f.apply(src, mode, dst);
    }
    Ok(Tensor::from_raw(batch.shape().to_vec(), out))
}
