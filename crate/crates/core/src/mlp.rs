//! A small trainable velocity network with hand-written backpropagation.
//!
//! Input is `[x; fourier(t); one_hot(condition)]` with eight time features
//! `sin(2^j pi t), cos(2^j pi t)` for `j = 0..4`. Hidden layers use `tanh`,
//! the output layer is linear. Training regresses `X_1 - X_0` at
//! `X_t = (1 - t) X_0 + t X_1` (conditional flow matching) with SGD and
//! momentum.
//!
//! # Checkpoint layout
//!
//! All integers are little-endian `u32`, all reals little-endian `f64`.
//!
//! | field            | size                      |
//! |------------------|---------------------------|
//! | magic `AFLOWMLP` | 8 bytes                   |
//! | version (= 1)    | u32                       |
//! | latent dim `d`   | u32                       |
//! | time features    | u32 (= 8)                 |
//! | conditions       | u32 (= 3)                 |
//! | layer count `L`  | u32                       |
//! | widths           | `L + 1` x u32, input first|
//! | parameters       | f64 array                 |
//!
//! Parameters are stored layer by layer: the weight matrix
//! (`out x in`, row-major) followed by the bias vector (`out`).

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{Condition, VelocityField};
use crate::gmm::EditTask;
use crate::latent::Latent;
use crate::rng::Stream;

pub const TIME_FEATURES: usize = 8;
pub const CONDITIONS: usize = 3;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AFLOWMLP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Fixed chunk size for the parallel gradient reduction.
const GRAD_CHUNK: usize = 32;

pub fn time_features(t: f64) -> [f64; TIME_FEATURES] {
    let mut out = [0.0; TIME_FEATURES];
    for j in 0..TIME_FEATURES / 2 {
        let arg = (1u32 << j) as f64 * std::f64::consts::PI * t;
        out[2 * j] = arg.sin();
        out[2 * j + 1] = arg.cos();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpField {
    dim: usize,
    /// Layer widths, input first, output last.
    widths: Vec<usize>,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct LayerView {
    rows: usize,
    cols: usize,
    w: usize,
    b: usize,
}

impl MlpField {
    /// Zero-initialized network with the given hidden widths.
    pub fn zeros(dim: usize, hidden: &[usize]) -> Self {
        let mut widths = vec![dim + TIME_FEATURES + CONDITIONS];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        let n = widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        MlpField {
            dim,
            widths,
            params: vec![0.0; n],
        }
    }

    /// Weights `N(0, 1 / fan_in)`, biases zero.
    pub fn init(dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut field = Self::zeros(dim, hidden);
        let mut stream = Stream::new(seed).fork(0x1417);
        for layer in field.layers() {
            let std = (1.0 / layer.cols as f64).sqrt();
            for p in &mut field.params[layer.w..layer.w + layer.rows * layer.cols] {
                *p = std * stream.normal();
            }
        }
        field
    }

    fn from_parts(dim: usize, widths: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if widths.len() < 2 || widths[0] != dim + TIME_FEATURES + CONDITIONS || *widths.last().unwrap() != dim {
            return Err(Error::Checkpoint(format!("widths {widths:?} do not fit latent dim {dim}")));
        }
        let n: usize = widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        if params.len() != n {
            return Err(Error::Checkpoint(format!("expected {n} parameters, found {}", params.len())));
        }
        Ok(MlpField { dim, widths, params })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn layers(&self) -> Vec<LayerView> {
        let mut offset = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let (cols, rows) = (w[0], w[1]);
                let view = LayerView {
                    rows,
                    cols,
                    w: offset,
                    b: offset + rows * cols,
                };
                offset += rows * cols + rows;
                view
            })
            .collect()
    }

    fn input(&self, x: &Latent, t: f64, cond: Condition) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.widths[0]);
        input.extend_from_slice(x.as_slice());
        input.extend_from_slice(&time_features(t));
        let mut one_hot = [0.0; CONDITIONS];
        one_hot[cond.index()] = 1.0;
        input.extend_from_slice(&one_hot);
        input
    }

    /// Activations of every layer, input first; hidden layers post-tanh.
    fn forward(&self, layers: &[LayerView], input: Vec<f64>) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(input);
        for (li, layer) in layers.iter().enumerate() {
            let prev = acts.last().unwrap();
            let last = li + 1 == layers.len();
            let out: Vec<f64> = (0..layer.rows)
                .map(|r| {
                    let row = &self.params[layer.w + r * layer.cols..layer.w + (r + 1) * layer.cols];
                    let z = self.params[layer.b + r] + row.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>();
                    if last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn eval(&self, x: &Latent, t: f64, cond: Condition) -> Result<Latent> {
        x.check_dim(self.dim)?;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("t = {t} outside [0, 1]")));
        }
        if !self.params.iter().all(|p| p.is_finite()) {
            return Err(Error::numeric(None, "non-finite network parameters"));
        }
        let layers = self.layers();
        let mut acts = self.forward(&layers, self.input(x, t, cond));
        Ok(Latent::new(acts.pop().unwrap()))
    }

    /// Adds the gradient of `weight * |out - target|^2` into `grad` and
    /// returns the unweighted squared error.
    fn accumulate(&self, layers: &[LayerView], ex: &CfmExample, weight: f64, grad: &mut [f64]) -> f64 {
        let acts = self.forward(layers, self.input(&ex.x_t(), ex.t, ex.cond));
        let target = ex.target();
        let out = acts.last().unwrap();
        let mut delta: Vec<f64> = out.iter().zip(target.iter()).map(|(o, y)| o - y).collect();
        let sq: f64 = delta.iter().map(|e| e * e).sum();
        for e in &mut delta {
            *e *= 2.0 * weight;
        }
        for li in (0..layers.len()).rev() {
            let layer = layers[li];
            let prev = &acts[li];
            for r in 0..layer.rows {
                let g = delta[r];
                grad[layer.b + r] += g;
                let row = &mut grad[layer.w + r * layer.cols..layer.w + (r + 1) * layer.cols];
                for (gw, a) in row.iter_mut().zip(prev) {
                    *gw += g * a;
                }
            }
            if li == 0 {
                break;
            }
            // back through W, then through tanh of the previous layer
            let mut next = vec![0.0; layer.cols];
            let weights = &self.params[layer.w..layer.w + layer.rows * layer.cols];
            for (d, row) in delta.iter().zip(weights.chunks_exact(layer.cols)) {
                for (n, w) in next.iter_mut().zip(row) {
                    *n += d * w;
                }
            }
            for (n, a) in next.iter_mut().zip(prev) {
                *n *= 1.0 - a * a;
            }
            delta = next;
        }
        sq
    }

    /// Loss and its exact parameter gradient. Chunks of the batch are
    /// processed in parallel and reduced in chunk order.
    pub fn loss_and_grad(&self, batch: &[CfmExample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let layers = self.layers();
        let weight = 1.0 / batch.len() as f64;
        let partials: Vec<(f64, Vec<f64>)> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; self.params.len()];
                let mut sq = 0.0;
                for ex in chunk {
                    sq += self.accumulate(&layers, ex, weight, &mut g);
                }
                (sq, g)
            })
            .collect();
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        for (sq, g) in partials {
            total += sq;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok((total * weight, grad))
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let header = [
            CHECKPOINT_VERSION,
            self.dim as u32,
            TIME_FEATURES as u32,
            CONDITIONS as u32,
            (self.widths.len() - 1) as u32,
        ];
        for v in header.iter().chain(self.widths.iter().map(|&w| w as u32).collect::<Vec<_>>().iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let read_u32 = |r: &mut R| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        let tf = read_u32(&mut r)? as usize;
        let nc = read_u32(&mut r)? as usize;
        if tf != TIME_FEATURES || nc != CONDITIONS {
            return Err(Error::Checkpoint(format!(
                "expected {TIME_FEATURES} time features and {CONDITIONS} conditions, found {tf} and {nc}"
            )));
        }
        let layers = read_u32(&mut r)? as usize;
        if layers == 0 || layers > 64 {
            return Err(Error::Checkpoint(format!("implausible layer count {layers}")));
        }
        let widths = (0..=layers)
            .map(|_| read_u32(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        let mut params = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            params.push(f64::from_le_bytes(b));
        }
        Self::from_parts(dim, widths, params)
    }
}

/// The learned field with classifier-free guidance against its own
/// unconditional branch.
impl VelocityField for MlpField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, x: &Latent, t: f64, cond: Condition, scale: f64) -> Result<Latent> {
        if cond == Condition::Unconditional || scale == 0.0 {
            return self.eval(x, t, Condition::Unconditional);
        }
        let v_c = self.eval(x, t, cond)?;
        if scale == 1.0 {
            return Ok(v_c);
        }
        let v_u = self.eval(x, t, Condition::Unconditional)?;
        Ok(v_u.axpy(scale, &(&v_c - &v_u)))
    }
}

/// One flow-matching regression example.
#[derive(Debug, Clone, PartialEq)]
pub struct CfmExample {
    pub x0: Latent,
    pub x1: Latent,
    pub t: f64,
    pub cond: Condition,
}

impl CfmExample {
    pub fn x_t(&self) -> Latent {
        self.x0.scale(1.0 - self.t).axpy(self.t, &self.x1)
    }

    pub fn target(&self) -> Latent {
        &self.x1 - &self.x0
    }
}

/// Draws a batch: condition uniform over the three branches, `X_0` from the
/// matching mixture, `X_1 ~ N(0, I)`, `t ~ U[0, 1)`.
pub fn sample_batch(task: &EditTask, size: usize, stream: &mut Stream) -> Vec<CfmExample> {
    (0..size)
        .map(|_| {
            let cond = Condition::ALL[(stream.next_u64() % 3) as usize];
            let x0 = task.mixture(cond).sample(stream);
            let x1 = stream.normal_latent(task.dim());
            let t = stream.uniform();
            CfmExample { x0, x1, t, cond }
        })
        .collect()
}

/// Mean of `|v(x_t, t, c) - (x_1 - x_0)|^2` over the batch.
pub fn cfm_loss(field: &MlpField, batch: &[CfmExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = 0.0;
    for ex in batch {
        let v = field.eval(&ex.x_t(), ex.t, ex.cond)?;
        total += (&v - &ex.target()).norm_squared();
    }
    Ok(total / batch.len() as f64)
}

/// The same loss for the exact conditional velocity; its expectation is
/// the irreducible part of the flow-matching loss.
pub fn oracle_loss(task: &EditTask, batch: &[CfmExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = 0.0;
    for ex in batch {
        let v = task.mixture(ex.cond).marginal_velocity(&ex.x_t(), ex.t)?;
        total += (&v - &ex.target()).norm_squared();
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            steps: 20_000,
            learning_rate: 1e-3,
            momentum: 0.9,
            seed: 0,
            hidden: vec![64, 64],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) || !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::invalid("need learning rate > 0 and momentum in (0, 1)"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub field: MlpField,
    pub loss_trace: Vec<f64>,
}

pub const DIVERGENCE_LOSS: f64 = 1e6;

/// SGD with momentum (`v <- mu v + g`, `theta <- theta - lr v`).
pub fn train_field(task: &EditTask, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let mut field = MlpField::init(task.dim(), &cfg.hidden, cfg.seed);
    let mut velocity = vec![0.0; field.param_count()];
    let batches = Stream::new(cfg.seed).fork(0xBA7C);
    let mut loss_trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = sample_batch(task, cfg.batch_size, &mut batches.fork(step as u64));
        let (loss, grad) = field.loss_and_grad(&batch)?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::TrainingDiverged { step, loss });
        }
        for ((p, v), g) in field.params.iter_mut().zip(&mut velocity).zip(&grad) {
            *v = cfg.momentum * *v + g;
            *p -= cfg.learning_rate * *v;
        }
        loss_trace.push(loss);
    }
    Ok(TrainReport { field, loss_trace })
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Denominator floor for relative errors of near-zero gradient entries.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares backprop gradients with central differences on `count`
/// distinct randomly chosen parameters.
pub fn numeric_grad_check(
    field: &MlpField,
    batch: &[CfmExample],
    eps: f64,
    count: usize,
    stream: &mut Stream,
) -> Result<GradCheck> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let (_, grad) = field.loss_and_grad(batch)?;
    let n = field.param_count();
    let count = count.min(n);
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    let mut taken = vec![false; n];
    while chosen.len() < count {
        let idx = (stream.next_u64() % n as u64) as usize;
        if !taken[idx] {
            taken[idx] = true;
            chosen.push(idx);
        }
    }
    let mut probe = field.clone();
    let mut max_rel: f64 = 0.0;
    for &idx in &chosen {
        let orig = probe.params[idx];
        probe.params[idx] = orig + eps;
        let up = cfm_loss(&probe, batch)?;
        probe.params[idx] = orig - eps;
        let down = cfm_loss(&probe, batch)?;
        probe.params[idx] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grad[idx];
        let denom = analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        max_rel = max_rel.max((analytic - numeric).abs() / denom);
    }
    Ok(GradCheck {
        max_rel_error: max_rel,
        checked: chosen.len(),
    })
}
