//! The learned transformation from slide embeddings into the common space,
//! with a hand-written backward pass and Adam training over constrained
//! batches.
//!
//! A head is a stack of affine layers (`y = x W + b`, `W` stored `d_in x d_out`)
//! with ReLU between consecutive layers; its output rows are always
//! L2-normalized.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScdaError};
use crate::format::write_bytes;
use crate::linalg::{dot, norm, Matrix};
use crate::loss::{supcon_loss, LossBatch};
use crate::rng;
use crate::sampler::{check_feasibility, make_batches, BatchSpec, TrainingPool};

pub const HEAD_MAGIC: [u8; 4] = *b"SCDH";
pub const HEAD_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadShape {
    Linear,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `d_in x d_out`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn d_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.cols()
    }

    fn apply(&self, x: &Matrix) -> Matrix {
        let mut y = x.matmul(&self.weight).expect("layer shapes checked");
        for i in 0..y.rows() {
            for (v, b) in y.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterHead {
    pub layers: Vec<Linear>,
}

impl AdapterHead {
    /// Linear head with `W = I`, `b = 0`.
    pub fn identity(d: usize) -> Self {
        AdapterHead { layers: vec![Linear { weight: Matrix::identity(d), bias: vec![0.0; d] }] }
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().expect("nonempty head").d_out()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(ScdaError::BadDimension("head has no layers".into()));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.d_out() {
                return Err(ScdaError::ShapeMismatch(format!(
                    "layer {k}: bias length {} vs {} outputs",
                    l.bias.len(),
                    l.d_out()
                )));
            }
            if k > 0 && self.layers[k - 1].d_out() != l.d_in() {
                return Err(ScdaError::ShapeMismatch(format!(
                    "layer {k} expects {} inputs, previous layer gives {}",
                    l.d_in(),
                    self.layers[k - 1].d_out()
                )));
            }
        }
        if self.d_out() < 2 {
            return Err(ScdaError::BadDimension(format!("d_out = {} < 2", self.d_out())));
        }
        Ok(())
    }

    /// Flat view of every parameter, layer by layer (weights then bias).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weight.as_slice().len();
            l.weight.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&HEAD_MAGIC);
        out.extend_from_slice(&HEAD_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.d_in() as u64).to_le_bytes());
            out.extend_from_slice(&(l.d_out() as u64).to_le_bytes());
            for &w in l.weight.as_slice() {
                out.extend_from_slice(&(w as f32).to_le_bytes());
            }
            for &b in &l.bias {
                out.extend_from_slice(&(b as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
        if magic != HEAD_MAGIC {
            return Err(ScdaError::BadMagic { expected: HEAD_MAGIC, found: magic });
        }
        let version = cur.u32()?;
        if version != HEAD_VERSION {
            return Err(ScdaError::VersionMismatch(version));
        }
        let n_layers = cur.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = cur.u64()? as usize;
            let cols = cur.u64()? as usize;
            let weight = Matrix::from_vec(rows, cols, cur.f32s(rows * cols)?)?;
            let bias = cur.f32s(cols)?;
            layers.push(Linear { weight, bias });
        }
        if cur.pos != bytes.len() {
            return Err(ScdaError::ShapeMismatch("trailing bytes after head".into()));
        }
        let head = AdapterHead { layers };
        head.validate()?;
        Ok(head)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| ScdaError::io(path, e))?;
        AdapterHead::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(ScdaError::TruncatedFile {
                expected: (self.pos as u64).saturating_add(n as u64),
                found: self.bytes.len() as u64,
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw =
            self.take(n.checked_mul(4).ok_or_else(|| ScdaError::ShapeMismatch("layer size overflows".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect())
    }
}

fn xavier(d_in: usize, d_out: usize, r: &mut rng::Rng) -> Linear {
    let limit = (6.0 / (d_in + d_out) as f64).sqrt();
    let data = (0..d_in * d_out).map(|_| r.random_range(-limit..=limit)).collect();
    Linear { weight: Matrix::from_vec(d_in, d_out, data).expect("sized"), bias: vec![0.0; d_out] }
}

/// Xavier-uniform weights, zero biases. Output dimension equals `d_in`.
pub fn init_head(d_in: usize, shape: HeadShape, seed: u64) -> Result<AdapterHead> {
    if d_in < 2 {
        return Err(ScdaError::BadDimension(format!("d_in = {d_in} < 2")));
    }
    let mut r = rng::seeded(seed);
    let layers = match shape {
        HeadShape::Linear => vec![xavier(d_in, d_in, &mut r)],
        HeadShape::Mlp { hidden } => {
            if hidden == 0 {
                return Err(ScdaError::BadDimension("hidden width 0".into()));
            }
            vec![xavier(d_in, hidden, &mut r), xavier(hidden, d_in, &mut r)]
        }
    };
    Ok(AdapterHead { layers })
}

struct Trace {
    /// inputs to each layer (post-activation of the previous one)
    inputs: Vec<Matrix>,
    norms: Vec<f64>,
    normalized: Matrix,
}

fn run_forward(head: &AdapterHead, z: &Matrix) -> Result<Trace> {
    if z.cols() != head.d_in() {
        return Err(ScdaError::DimensionMismatch { expected: head.d_in(), found: z.cols() });
    }
    let mut inputs = Vec::with_capacity(head.layers.len());
    let mut x = z.clone();
    let last = head.layers.len() - 1;
    for (k, l) in head.layers.iter().enumerate() {
        let mut y = l.apply(&x);
        if k < last {
            y.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        inputs.push(std::mem::replace(&mut x, y));
    }
    let out = x;
    let mut norms = Vec::with_capacity(out.rows());
    let mut normalized = out.clone();
    for i in 0..out.rows() {
        let n = norm(out.row(i));
        if !(n >= 1e-12) {
            return Err(ScdaError::ZeroOutput(i));
        }
        normalized.row_mut(i).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok(Trace { inputs, norms, normalized })
}

/// Maps rows of `z` into the common space; every output row has unit norm.
pub fn forward(head: &AdapterHead, z: &Matrix) -> Result<Matrix> {
    Ok(run_forward(head, z)?.normalized)
}

/// Gradients with the same layout as [`AdapterHead::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub layers: Vec<Linear>,
}

impl HeadGrads {
    pub fn flat(&self) -> Vec<f64> {
        AdapterHead { layers: self.layers.clone() }.params()
    }
}

/// Chain rule from `d loss / d C` back to every weight and bias, through the
/// row normalization `(I - c c^T) / |u|`, the ReLUs, and the affine maps.
pub fn backward(head: &AdapterHead, z: &Matrix, upstream: &Matrix) -> Result<HeadGrads> {
    if upstream.rows() != z.rows() || upstream.cols() != head.d_out() {
        return Err(ScdaError::ShapeMismatch(format!(
            "upstream gradient is {}x{}, forward output is {}x{}",
            upstream.rows(),
            upstream.cols(),
            z.rows(),
            head.d_out()
        )));
    }
    let trace = run_forward(head, z)?;
    let mut delta = Matrix::zeros(upstream.rows(), upstream.cols());
    for i in 0..upstream.rows() {
        let c = trace.normalized.row(i);
        let g = upstream.row(i);
        let proj = dot(c, g);
        let n = trace.norms[i];
        for ((d, &gk), &ck) in delta.row_mut(i).iter_mut().zip(g).zip(c) {
            *d = (gk - ck * proj) / n;
        }
    }

    let mut grads: Vec<Linear> = Vec::with_capacity(head.layers.len());
    for k in (0..head.layers.len()).rev() {
        let layer = &head.layers[k];
        let x = &trace.inputs[k];
        let dw = x.transpose().matmul(&delta)?;
        let mut db = vec![0.0; layer.d_out()];
        for row in delta.row_iter() {
            for (b, v) in db.iter_mut().zip(row) {
                *b += v;
            }
        }
        if k > 0 {
            let mut dx = delta.matmul(&layer.weight.transpose())?;
            // x = relu(previous pre-activation); zero where inactive
            for (g, &xv) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
                if xv <= 0.0 {
                    *g = 0.0;
                }
            }
            delta = dx;
        }
        grads.push(Linear { weight: dw, bias: db });
    }
    grads.reverse();
    Ok(HeadGrads { layers: grads })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub temperature: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch: BatchSpec,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub head: HeadShape,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            temperature: 0.1,
            learning_rate: 1e-3,
            steps: 1000,
            batch: BatchSpec::default(),
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            head: HeadShape::Linear,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(ScdaError::InvalidConfig(what.to_string()));
        if !(self.temperature > 0.0) {
            return Err(ScdaError::NonPositiveTemperature(self.temperature));
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0) {
            return bad("adam_beta1 must lie in (0, 1)");
        }
        if !(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0) {
            return bad("adam_beta2 must lie in (0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        self.batch.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { beta1, beta2, eps, lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Raw per-step loss (sum over anchors).
    pub loss_trace: Vec<f64>,
    /// Per-step loss divided by the number of contributing anchors; this is
    /// the quantity whose gradient drives the update.
    pub scaled_loss_trace: Vec<f64>,
    pub anchors_used_trace: Vec<usize>,
    pub final_head: AdapterHead,
}

/// Trains a head on `embeddings` (rows aligned with `pool`).
pub fn train(embeddings: &Matrix, pool: &TrainingPool, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if embeddings.rows() != pool.len() {
        return Err(ScdaError::DimensionMismatch { expected: pool.len(), found: embeddings.rows() });
    }
    let report = check_feasibility(pool, &config.batch)?;
    if !report.feasible(config.batch.allow_replacement) {
        return Err(ScdaError::InfeasibleSpec(
            "training pool cannot fill the per-cell quotas without replacement".into(),
        ));
    }
    let mut head = init_head(embeddings.cols(), config.head, rng::derive_seed(config.seed, &[rng::tag("init")]))?;
    let mut params = head.params();
    let mut adam = Adam::new(params.len(), config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps);
    let mut loss_trace = Vec::with_capacity(config.steps);
    let mut scaled_loss_trace = Vec::with_capacity(config.steps);
    let mut anchors_used_trace = Vec::with_capacity(config.steps);

    let per_epoch = config.batch.steps_per_epoch;
    let mut plan = Vec::new();
    for step in 0..config.steps {
        if step % per_epoch == 0 {
            let epoch = (step / per_epoch) as u64;
            plan =
                make_batches(pool, &config.batch, rng::derive_seed(config.seed, &[rng::tag("epoch"), epoch]))?.batches;
        }
        let idx = &plan[step % per_epoch];
        let zb = embeddings.select_rows(idx);
        let labels: Vec<usize> = idx.iter().map(|&i| pool.labels[i]).collect();
        let c = forward(&head, &zb)?;
        let mut res = supcon_loss(&LossBatch { reps: &c, labels: &labels, temperature: config.temperature })?;
        if !res.loss.is_finite() {
            return Err(ScdaError::DivergenceDetected(step));
        }
        let scale = if res.anchors_used > 0 { 1.0 / res.anchors_used as f64 } else { 0.0 };
        loss_trace.push(res.loss);
        scaled_loss_trace.push(res.loss * scale);
        anchors_used_trace.push(res.anchors_used);
        res.grad.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
        let grads = backward(&head, &zb, &res.grad)?;
        adam.step(&mut params, &grads.flat());
        head.set_params(&params);
        if !head.is_finite() {
            return Err(ScdaError::DivergenceDetected(step));
        }
    }
    Ok(TrainReport { loss_trace, scaled_loss_trace, anchors_used_trace, final_head: head })
}

/// Applies the head row by row; row order and count are preserved, so the
/// owning manifest continues to describe the output.
pub fn transform(head: &AdapterHead, embeddings: &Matrix) -> Result<Matrix> {
    forward(head, embeddings)
}
