//! Fully connected ReLU classifier with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector. For each layer in order the layout is
//! the weight matrix `W` (d_out × d_in, row-major) followed by the bias
//! (d_out). Hidden layers apply ReLU; the output layer is affine. The ReLU
//! subgradient at zero is taken as zero.

use std::io::{Read, Write};

use rand::Rng;
use thiserror::Error;

use crate::linalg::{axpy, dot};
use crate::rng::rng_from_seed;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub y: usize,
}

impl LabeledExample {
    pub fn new(x: Vec<f64>, y: usize) -> Self {
        Self { x, y }
    }
}

/// Offsets of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub d_in: usize,
    pub d_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    layout: Vec<LayerLayout>,
    weights: Vec<f64>,
}

/// Per-layer activations kept for the backward pass.
struct Trace {
    /// `acts[0]` is the input; `acts[i + 1]` is the output of layer `i`
    /// (post-ReLU for hidden layers, logits for the last).
    acts: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Model with all parameters zero.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(ModelError::InvalidArgument(format!(
                "need at least input and output dims, all positive; got {layer_dims:?}"
            )));
        }
        let mut layout = Vec::with_capacity(layer_dims.len() - 1);
        let mut offset = 0;
        for w in layer_dims.windows(2) {
            let (d_in, d_out) = (w[0], w[1]);
            layout.push(LayerLayout { d_in, d_out, weight_offset: offset, bias_offset: offset + d_in * d_out });
            offset += d_in * d_out + d_out;
        }
        Ok(Self { layer_dims: layer_dims.to_vec(), layout, weights: vec![0.0; offset] })
    }

    /// Glorot-uniform weights in `±√(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        let mut m = Self::zeros(layer_dims)?;
        let mut rng = rng_from_seed(seed);
        for l in m.layout.clone() {
            let bound = (6.0 / (l.d_in + l.d_out) as f64).sqrt();
            for v in &mut m.weights[l.weight_offset..l.bias_offset] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(m)
    }

    pub fn from_weights(layer_dims: &[usize], weights: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(layer_dims)?;
        if weights.len() != m.weights.len() {
            return Err(ModelError::InvalidArgument(format!(
                "expected {} parameters, got {}",
                m.weights.len(),
                weights.len()
            )));
        }
        m.weights = weights;
        Ok(m)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layout(&self) -> &[LayerLayout] {
        &self.layout
    }

    pub fn p(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated dims")
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// `(W, b)` of layer `i` as row-major slices.
    pub fn layer(&self, i: usize) -> (&[f64], &[f64]) {
        let l = self.layout[i];
        (&self.weights[l.weight_offset..l.bias_offset], &self.weights[l.bias_offset..l.bias_offset + l.d_out])
    }

    /// Splits the flat vector into per-layer `(W, b)` copies.
    pub fn unflatten(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        (0..self.layout.len())
            .map(|i| {
                let (w, b) = self.layer(i);
                (w.to_vec(), b.to_vec())
            })
            .collect()
    }

    /// Inverse of [`MlpModel::unflatten`].
    pub fn flatten(layer_dims: &[usize], layers: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let mut m = Self::zeros(layer_dims)?;
        if layers.len() != m.layout.len() {
            return Err(ModelError::InvalidArgument("layer count mismatch".into()));
        }
        for (l, (w, b)) in m.layout.clone().iter().zip(layers) {
            if w.len() != l.d_in * l.d_out || b.len() != l.d_out {
                return Err(ModelError::InvalidArgument("layer shape mismatch".into()));
            }
            m.weights[l.weight_offset..l.bias_offset].copy_from_slice(w);
            m.weights[l.bias_offset..l.bias_offset + l.d_out].copy_from_slice(b);
        }
        Ok(m)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(ModelError::InvalidArgument(format!(
                "input has length {}, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn check_example(&self, ex: &LabeledExample) -> Result<()> {
        self.check_input(&ex.x)?;
        if ex.y >= self.output_dim() {
            return Err(ModelError::InvalidArgument(format!(
                "label {} out of range for {} outputs",
                ex.y,
                self.output_dim()
            )));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layout.len() + 1);
        acts.push(x.to_vec());
        let last = self.layout.len() - 1;
        for (i, l) in self.layout.iter().enumerate() {
            let w = &self.weights[l.weight_offset..l.bias_offset];
            let b = &self.weights[l.bias_offset..l.bias_offset + l.d_out];
            let input = &acts[i];
            let mut out: Vec<f64> = (0..l.d_out).map(|o| dot(&w[o * l.d_in..(o + 1) * l.d_in], input) + b[o]).collect();
            if i < last {
                for v in &mut out {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(out);
        }
        Trace { acts }
    }

    /// Accumulates `scale · ∂(δᵀ logits)/∂w` into `grad`, for output sensitivity `delta`.
    fn backward(&self, trace: &Trace, delta: Vec<f64>, scale: f64, grad: &mut [f64]) {
        let mut delta = delta;
        for (i, l) in self.layout.iter().enumerate().rev() {
            let input = &trace.acts[i];
            let w = &self.weights[l.weight_offset..l.bias_offset];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let g_row = &mut grad[l.weight_offset + o * l.d_in..l.weight_offset + (o + 1) * l.d_in];
                axpy(scale * d, input, g_row);
                grad[l.bias_offset + o] += scale * d;
            }
            if i == 0 {
                break;
            }
            let mut prev = vec![0.0; l.d_in];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, &w[o * l.d_in..(o + 1) * l.d_in], &mut prev);
                }
            }
            // ReLU mask: a hidden unit with zero output passes no gradient.
            for (v, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *v = 0.0;
                }
            }
            delta = prev;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trace(x).acts.pop().expect("output layer"))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let logits = self.forward(x)?;
        Ok(argmax(&logits))
    }

    /// Gradient of the ground-truth logit `f_y(x, w)` with respect to all parameters.
    pub fn correct_logit_gradient(&self, ex: &LabeledExample) -> Result<Vec<f64>> {
        self.check_example(ex)?;
        let trace = self.trace(&ex.x);
        let mut delta = vec![0.0; self.output_dim()];
        delta[ex.y] = 1.0;
        let mut grad = vec![0.0; self.p()];
        self.backward(&trace, delta, 1.0, &mut grad);
        Ok(grad)
    }

    /// Mean softmax cross-entropy over `batch` and its gradient.
    pub fn loss_and_gradient(&self, batch: &[LabeledExample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(ModelError::InvalidArgument("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.p()];
        let mut loss = 0.0;
        for ex in batch {
            self.check_example(ex)?;
            let trace = self.trace(&ex.x);
            let logits = trace.acts.last().expect("output");
            let (lse, probs) = log_softmax_parts(logits);
            loss += lse - logits[ex.y];
            let mut delta = probs;
            delta[ex.y] -= 1.0;
            self.backward(&trace, delta, scale, &mut grad);
        }
        Ok((loss * scale, grad))
    }

    pub fn accuracy(&self, examples: &[LabeledExample]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for ex in examples {
            self.check_example(ex)?;
            if argmax(self.trace(&ex.x).acts.last().expect("output")) == ex.y {
                correct += 1;
            }
        }
        Ok(correct as f64 / examples.len() as f64)
    }

    /// Writes the weight checkpoint.
    ///
    /// Layout (little-endian): magic `SOGDMLP1`, `u64` number of dims, each
    /// dim as `u64`, `u64` p, then p `f64` values in the flat layout.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MLP_MAGIC)?;
        out.write_all(&(self.layer_dims.len() as u64).to_le_bytes())?;
        for &d in &self.layer_dims {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        out.write_all(&(self.p() as u64).to_le_bytes())?;
        for v in &self.weights {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MLP_MAGIC {
            return Err(ModelError::Checkpoint("bad magic".into()));
        }
        let read_u64 = |input: &mut R| -> Result<u64> {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let n_dims = read_u64(&mut input)? as usize;
        if n_dims > 1 << 16 {
            return Err(ModelError::Checkpoint(format!("implausible layer count {n_dims}")));
        }
        let dims = (0..n_dims).map(|_| read_u64(&mut input).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let p = read_u64(&mut input)? as usize;
        let mut m = Self::zeros(&dims)?;
        if p != m.p() {
            return Err(ModelError::Checkpoint(format!("header says p = {p}, dims imply {}", m.p())));
        }
        for v in &mut m.weights {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        Ok(m)
    }
}

const MLP_MAGIC: &[u8; 8] = b"SOGDMLP1";

/// `(log Σ exp zᵢ, softmax z)` with max subtraction.
fn log_softmax_parts(z: &[f64]) -> (f64, Vec<f64>) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (max + sum.ln(), exps.into_iter().map(|e| e / sum).collect())
}

/// Index of the largest entry, first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn forward(model: &MlpModel, x: &[f64]) -> Result<Vec<f64>> {
    model.forward(x)
}

pub fn correct_logit_gradient(model: &MlpModel, ex: &LabeledExample) -> Result<Vec<f64>> {
    model.correct_logit_gradient(ex)
}

pub fn loss_and_gradient(model: &MlpModel, batch: &[LabeledExample]) -> Result<(f64, Vec<f64>)> {
    model.loss_and_gradient(batch)
}
