//! Shaped, row-major `f64` arrays.
//!
//! A [`Tensor`] is the carrier for samples, velocities and masks. Sampler
//! code treats a `[n, d]` tensor as `n` independent particles of dimension
//! `d`; a 1-D tensor `[d]` is a single particle.

use crate::error::{FlowError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rejecting zero extents, size mismatches and
    /// non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(FlowError::InvalidShape(shape));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(FlowError::InvalidShape(shape));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite(i));
        }
        Ok(Self { shape, data })
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; n])
    }

    /// Skips validation. Used for intermediate results whose finiteness is
    /// checked by the caller (sampler loops guard every step).
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Extent of the last axis.
    pub fn row_len(&self) -> usize {
        *self.shape.last().expect("tensor shape is never empty")
    }

    /// Number of rows when viewed as `[n, row_len]`.
    pub fn n_rows(&self) -> usize {
        self.data.len() / self.row_len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.row_len();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.row_len())
    }

    pub fn rows_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        let d = self.row_len();
        self.data.chunks_exact_mut(d)
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &e) in index.iter().zip(&self.shape) {
            if i >= e {
                return None;
            }
            flat = flat * e + i;
        }
        Some(self.data[flat])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Euclidean norm of the flattened data.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn ensure_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(FlowError::ShapeMismatch {
                expected: self.shape.clone(),
                actual: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_raw(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.ensure_same_shape(other)?;
        Ok(Tensor::from_raw(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// `alpha * self + beta * other`, elementwise.
    pub fn lincomb(&self, alpha: f64, other: &Tensor, beta: f64) -> Result<Tensor> {
        self.zip_map(other, |a, b| alpha * a + beta * b)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| s * v)
    }

    /// Repeats a `[d]` tensor (or passes through a tensor of the target
    /// shape) so that it matches `like`.
    pub fn expand_rows_like(&self, like: &Tensor) -> Result<Tensor> {
        if self.shape == like.shape {
            return Ok(self.clone());
        }
        if self.ndim() == 1 && self.len() == like.row_len() {
            let data = self
                .data
                .iter()
                .copied()
                .cycle()
                .take(like.len())
                .collect();
            return Ok(Tensor::from_raw(like.shape.clone(), data));
        }
        Err(FlowError::ShapeMismatch {
            expected: like.shape.clone(),
            actual: self.shape.clone(),
        })
    }

    /// Keeps the listed columns of a `[n, d]` (or `[d]`) tensor.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Tensor> {
        let d = self.row_len();
        if cols.is_empty() || cols.iter().any(|&c| c >= d) {
            return Err(crate::error::invalid("cols", format!("column out of range for width {d}")));
        }
        let data = self
            .rows()
            .flat_map(|r| cols.iter().map(move |&c| r[c]))
            .collect();
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = cols.len();
        Ok(Tensor::from_raw(shape, data))
    }
}
