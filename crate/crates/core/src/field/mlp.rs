//! A `[d + 1, h, h, d]` tanh MLP velocity field trained with the
//! flow-matching objective `E || v(x_t, t) - (x_1 - x_0) ||^2`.
//!
//! Gradients are hand-coded reverse mode for this fixed architecture.
//!
//! Binary format (`FLF1`), all integers little-endian:
//!
//! ```text
//! b"FLF1" | version: u32 | layer_count: u32
//! layer_count x (rows: u32, cols: u32)
//! per layer: weights (rows x cols, row-major f64) then biases (rows x f64)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{DataSampler, NoiseSchedule, VelocityField};
use crate::error::{invalid, FlowError, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"FLF1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    rows: usize,
    cols: usize,
    w_off: usize,
    b_off: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpField {
    layers: Vec<Layer>,
    params: Vec<f64>,
}

fn layout(widths: &[usize]) -> (Vec<Layer>, usize) {
    let mut layers = Vec::with_capacity(widths.len() - 1);
    let mut off = 0;
    for w in widths.windows(2) {
        let (cols, rows) = (w[0], w[1]);
        layers.push(Layer {
            rows,
            cols,
            w_off: off,
            b_off: off + rows * cols,
        });
        off += rows * cols + rows;
    }
    (layers, off)
}

impl MlpField {
    /// Xavier-uniform weights and zero biases for widths `[d + 1, h, h, d]`.
    pub fn init(dim: usize, hidden: usize, rng: &mut SeededRng) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(invalid("widths", "dimension and hidden width must be positive"));
        }
        Self::init_with_widths(&[dim + 1, hidden, hidden, dim], rng)
    }

    pub fn init_with_widths(widths: &[usize], rng: &mut SeededRng) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(invalid("widths", format!("{widths:?}")));
        }
        if widths[0] != widths[widths.len() - 1] + 1 {
            return Err(invalid("widths", "input width must be output width + 1"));
        }
        let (layers, n) = layout(widths);
        let mut params = vec![0.0; n];
        for l in &layers {
            let bound = (6.0 / (l.rows + l.cols) as f64).sqrt();
            for p in &mut params[l.w_off..l.b_off] {
                *p = (2.0 * rng.uniform() - 1.0) * bound;
            }
        }
        Ok(Self { layers, params })
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].cols];
        w.extend(self.layers.iter().map(|l| l.rows));
        w
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn max_width(&self) -> usize {
        self.widths().into_iter().max().unwrap()
    }

    /// Forward pass recording every layer's activation into `acts`
    /// (`acts[0]` is the input).
    fn forward_record(&self, input: &[f64], acts: &mut [Vec<f64>]) {
        acts[0].copy_from_slice(input);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let (prev, rest) = acts.split_at_mut(i + 1);
            let src = &prev[i];
            let dst = &mut rest[0];
            let w = &self.params[l.w_off..l.b_off];
            let b = &self.params[l.b_off..l.b_off + l.rows];
            for r in 0..l.rows {
                let row = &w[r * l.cols..(r + 1) * l.cols];
                let z = b[r] + row.iter().zip(src.iter()).map(|(a, c)| a * c).sum::<f64>();
                dst[r] = if i == last { z } else { z.tanh() };
            }
        }
    }

    fn activation_buffers(&self) -> Vec<Vec<f64>> {
        self.widths().into_iter().map(|w| vec![0.0; w]).collect()
    }

    /// Mean flow-matching loss over `batch` and its gradient w.r.t. all
    /// parameters (same layout as [`params`](Self::params)).
    pub fn loss_and_grad(&self, batch: &FmBatch, schedule: NoiseSchedule) -> Result<(f64, Vec<f64>)> {
        let d = self.dim();
        batch.check(d)?;
        let n = batch.len();
        let mut grad = vec![0.0; self.params.len()];
        let mut acts = self.activation_buffers();
        let mut input = vec![0.0; d + 1];
        let mut delta = vec![0.0; self.max_width()];
        let mut next = vec![0.0; self.max_width()];
        let mut loss = 0.0;
        for i in 0..n {
            let target = batch.fill_input(i, schedule, &mut input)?;
            self.forward_record(&input, &mut acts);
            let out = acts.last().unwrap();
            for k in 0..d {
                let e = out[k] - target[k];
                loss += e * e;
                delta[k] = 2.0 * e / n as f64;
            }
            for (li, l) in self.layers.iter().enumerate().rev() {
                let a_prev = &acts[li];
                for r in 0..l.rows {
                    let dr = delta[r];
                    grad[l.b_off + r] += dr;
                    let gw = &mut grad[l.w_off + r * l.cols..l.w_off + (r + 1) * l.cols];
                    for (g, a) in gw.iter_mut().zip(a_prev) {
                        *g += dr * a;
                    }
                }
                if li == 0 {
                    break;
                }
                let w = &self.params[l.w_off..l.b_off];
                for c in 0..l.cols {
                    let mut s = 0.0;
                    for r in 0..l.rows {
                        s += w[r * l.cols + c] * delta[r];
                    }
                    next[c] = s * (1.0 - a_prev[c] * a_prev[c]);
                }
                delta[..l.cols].copy_from_slice(&next[..l.cols]);
            }
        }
        Ok((loss / n as f64, grad))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.layers.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.rows as u32).to_le_bytes());
            out.extend_from_slice(&(l.cols as u32).to_le_bytes());
        }
        // layout already stores each layer's weights followed by its biases
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut cur, &mut magic)?;
        if &magic != MAGIC {
            return Err(FlowError::Format("bad magic".into()));
        }
        let version = read_u32(&mut cur)?;
        if version != VERSION {
            return Err(FlowError::Format(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut cur)? as usize;
        if count == 0 || count > 64 {
            return Err(FlowError::Format(format!("implausible layer count {count}")));
        }
        let mut widths = Vec::with_capacity(count + 1);
        for i in 0..count {
            let rows = read_u32(&mut cur)? as usize;
            let cols = read_u32(&mut cur)? as usize;
            if rows == 0 || cols == 0 {
                return Err(FlowError::Format("zero-sized layer".into()));
            }
            if i == 0 {
                widths.push(cols);
            } else if widths[i] != cols {
                return Err(FlowError::Format(format!("layer {i} does not chain")));
            }
            widths.push(rows);
        }
        if widths[0] != widths[count] + 1 {
            return Err(FlowError::Format("input width must be output width + 1".into()));
        }
        let (layers, n) = layout(&widths);
        if cur.len() != n * 8 {
            return Err(FlowError::Format(format!(
                "expected {} parameter bytes, found {}",
                n * 8,
                cur.len()
            )));
        }
        let params: Vec<f64> = cur
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(FlowError::Format("non-finite weight".into()));
        }
        Ok(Self { layers, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn read_exact(cur: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    cur.read_exact(buf)
        .map_err(|_| FlowError::Format("truncated header".into()))
}

fn read_u32(cur: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(cur, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

impl VelocityField for MlpField {
    fn dim(&self) -> usize {
        self.layers.last().unwrap().rows
    }

    fn velocity_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let mut acts = self.activation_buffers();
        let mut input = Vec::with_capacity(x.len() + 1);
        input.extend_from_slice(x);
        input.push(t);
        self.forward_record(&input, &mut acts);
        out.copy_from_slice(acts.last().unwrap());
        Ok(())
    }

    fn velocity_batch(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        let d = self.dim();
        let mut acts = self.activation_buffers();
        let mut input = vec![0.0; d + 1];
        input[d] = t;
        let mut out = vec![0.0; x.len()];
        for (row, dst) in x.rows().zip(out.chunks_exact_mut(d)) {
            input[..d].copy_from_slice(row);
            self.forward_record(&input, &mut acts);
            dst.copy_from_slice(acts.last().unwrap());
        }
        Ok(Tensor::from_raw(x.shape().to_vec(), out))
    }
}

/// Training pairs `(x_0, x_1, t)`.
#[derive(Debug, Clone)]
pub struct FmBatch {
    pub x0: Tensor,
    pub x1: Tensor,
    pub t: Vec<f64>,
}

impl FmBatch {
    pub fn new(x0: Tensor, x1: Tensor, t: Vec<f64>) -> Result<Self> {
        x0.ensure_same_shape(&x1)?;
        let b = Self { x0, x1, t };
        b.check(b.x0.row_len())?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.t.is_empty() {
            return Err(invalid("batch", "empty"));
        }
        if self.x0.row_len() != dim || self.x0.n_rows() != self.t.len() {
            return Err(FlowError::ShapeMismatch {
                expected: vec![self.t.len(), dim],
                actual: self.x0.shape().to_vec(),
            });
        }
        self.x0.ensure_same_shape(&self.x1)?;
        if self.t.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(invalid("t", "all times must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Writes `[x_t, t]` for pair `i` into `input`; returns the target
    /// velocity `x_1 - x_0`.
    fn fill_input(&self, i: usize, schedule: NoiseSchedule, input: &mut [f64]) -> Result<Vec<f64>> {
        let d = self.x0.row_len();
        let s = schedule.sigma(self.t[i])?;
        let (a, b) = (self.x0.row(i), self.x1.row(i));
        let mut target = vec![0.0; d];
        for k in 0..d {
            input[k] = (1.0 - s) * a[k] + s * b[k];
            target[k] = b[k] - a[k];
        }
        input[d] = self.t[i];
        Ok(target)
    }

    /// Draws `n` pairs: `x_0` from `sampler`, `x_1 ~ N(0, I)`, `t ~ U[0, 1]`.
    pub fn draw(sampler: &dyn DataSampler, n: usize, rng: &mut SeededRng) -> Result<Self> {
        let d = sampler.dim();
        let x0 = sampler.sample(rng, n)?;
        let x1 = rng.sample_standard_normal(&[n, d])?;
        let t = (0..n).map(|_| rng.uniform()).collect();
        Self::new(x0, x1, t)
    }
}

/// Mean of `|| v(x_t, t) - (x_1 - x_0) ||^2` over the batch.
pub fn fm_loss(field: &dyn VelocityField, batch: &FmBatch) -> Result<f64> {
    let d = field.dim();
    batch.check(d)?;
    let schedule = NoiseSchedule::linear();
    let mut input = vec![0.0; d + 1];
    let mut v = vec![0.0; d];
    let mut total = 0.0;
    for i in 0..batch.len() {
        let target = batch.fill_input(i, schedule, &mut input)?;
        field.velocity_into(&input[..d], batch.t[i], &mut v)?;
        total += v.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: usize,
    /// Learning rate at the last step as a fraction of `lr` (cosine decay).
    /// `1.0` keeps the rate constant.
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch: 512,
            lr: 5e-3,
            seed: 0,
            hidden: 64,
            final_lr_fraction: 0.02,
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains an MLP field on `sampler`'s distribution. `on_step` receives
/// `(step, batch_loss)` before each update.
pub fn train_mlp_field_with(
    sampler: &dyn DataSampler,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<MlpField> {
    if cfg.steps == 0 {
        return Err(invalid("steps", "must be >= 1"));
    }
    if cfg.batch == 0 {
        return Err(invalid("batch", "must be >= 1"));
    }
    if !(cfg.lr >= 0.0) || !(cfg.final_lr_fraction >= 0.0) {
        return Err(invalid("lr", "must be non-negative"));
    }
    let root = SeededRng::new(cfg.seed, 0);
    let mut field = MlpField::init(sampler.dim(), cfg.hidden, &mut root.split(0))?;
    let mut data_rng = root.split(1);
    let mut adam = Adam::new(field.params.len());
    let schedule = NoiseSchedule::linear();
    for step in 0..cfg.steps {
        let batch = FmBatch::draw(sampler, cfg.batch, &mut data_rng)?;
        let (loss, grad) = field.loss_and_grad(&batch, schedule)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(FlowError::TrainingDiverged { step });
        }
        on_step(step, loss);
        let progress = if cfg.steps > 1 {
            step as f64 / (cfg.steps - 1) as f64
        } else {
            0.0
        };
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        let lr = cfg.lr * (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * cos);
        adam.step(&mut field.params, &grad, lr);
    }
    Ok(field)
}

pub fn train_mlp_field(sampler: &dyn DataSampler, cfg: &TrainConfig) -> Result<MlpField> {
    train_mlp_field_with(sampler, cfg, |_, _| {})
}
