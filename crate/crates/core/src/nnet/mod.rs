//! Minimal dense neural network engine.
//!
//! A [`Network`] is a stack of fully connected layers with one activation
//! for all hidden layers and a linear or softmax output head. The engine
//! provides exactly what the experiments need and nothing else: batched
//! forward evaluation with access to the last-hidden-layer *embedding*,
//! reverse-mode gradients ([`train`]), a finite-difference gradient checker
//! ([`gradcheck`]), and binary checkpoints.
//!
//! The embedding of an input is the activation vector of the last hidden
//! layer; for a network with no hidden layer (a plain affine map, allowed
//! for baselines) it degenerates to the input itself.

pub mod gradcheck;
pub mod loss;
pub mod train;

pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::LossSpec;
pub use train::{
    train, train_observed, AlignmentConfig, BandwidthMode, EpochStats, Optimizer, TrainConfig,
    TrainHistory,
};

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{domains, RngStream};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Gelu,
    Tanh,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Gelu => {
                // tanh-form GELU; smooth, so finite differences agree with
                // the analytic derivative everywhere.
                let c = (2.0 / std::f64::consts::PI).sqrt();
                let u = c * (z + 0.044715 * z.powi(3));
                0.5 * z * (1.0 + u.tanh())
            }
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                let u = c * (z + 0.044715 * z.powi(3));
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * z * z)
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    fn file_code(&self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Gelu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_file_code(code: u8) -> Option<Activation> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Gelu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Output-layer head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputHead {
    Linear,
    Softmax,
}

impl OutputHead {
    fn file_code(&self) -> u8 {
        match self {
            OutputHead::Linear => 0,
            OutputHead::Softmax => 1,
        }
    }

    fn from_file_code(code: u8) -> Option<OutputHead> {
        match code {
            0 => Some(OutputHead::Linear),
            1 => Some(OutputHead::Softmax),
            _ => None,
        }
    }
}

/// Architecture description: `widths[0]` is the input size, the last entry
/// the output size, everything between a hidden layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub head: OutputHead,
}

impl NetworkSpec {
    /// Validate: at least input and output, every width ≥ 1.
    pub fn new(widths: Vec<usize>, activation: Activation, head: OutputHead) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Validation(format!(
                "network needs at least input and output widths, got {widths:?}"
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Validation(format!("layer widths must be ≥ 1, got {widths:?}")));
        }
        Ok(NetworkSpec { widths, activation, head })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Width of the embedding (last hidden layer, or the input when there
    /// is no hidden layer).
    pub fn embedding_dim(&self) -> usize {
        self.widths[self.widths.len() - 2]
    }

    /// Number of affine layers.
    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }
}

/// A dense network: per-layer weight matrices (out × in) and bias vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// All intermediate values of a batched forward pass, kept for backprop.
pub(crate) struct ForwardPass {
    /// Pre-activations per layer: `pre[l]` has shape (batch, widths[l+1]).
    pub pre: Vec<Array2<f64>>,
    /// Post-activation values per level: `post[0]` is the input batch,
    /// `post[l+1]` the output of layer `l`; the last entry is the head
    /// output.
    pub post: Vec<Array2<f64>>,
}

impl ForwardPass {
    /// Batch embedding: activations of the last hidden level.
    pub fn embeddings(&self) -> &Array2<f64> {
        &self.post[self.post.len() - 2]
    }

    /// Batch output after the head.
    pub fn outputs(&self) -> &Array2<f64> {
        &self.post[self.post.len() - 1]
    }
}

impl Network {
    /// Glorot-style initialization: weights uniform in ±√(6/(fan_in +
    /// fan_out)) drawn from per-layer streams of `seed`; biases zero.
    pub fn init(spec: NetworkSpec, seed: u64) -> Network {
        let mut weights = Vec::with_capacity(spec.layer_count());
        let mut biases = Vec::with_capacity(spec.layer_count());
        for l in 0..spec.layer_count() {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = RngStream::derived(seed, domains::NET_INIT, l as u64);
            let mut w = Array2::zeros((fan_out, fan_in));
            for v in w.iter_mut() {
                *v = rng.uniform(-limit, limit);
            }
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Network { spec, weights, biases }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub(crate) fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub(crate) fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub(crate) fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    /// Total parameter count.
    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Batched forward pass retaining intermediates.
    pub(crate) fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<ForwardPass> {
        if inputs.ncols() != self.spec.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} does not match network input {}",
                inputs.ncols(),
                self.spec.input_dim()
            )));
        }
        let layers = self.spec.layer_count();
        let mut pre = Vec::with_capacity(layers);
        let mut post = Vec::with_capacity(layers + 1);
        post.push(inputs.to_owned());
        for l in 0..layers {
            let z = post[l].dot(&self.weights[l].t()) + &self.biases[l];
            let a = if l + 1 < layers {
                z.mapv(|v| self.spec.activation.apply(v))
            } else {
                match self.spec.head {
                    OutputHead::Linear => z.clone(),
                    OutputHead::Softmax => softmax_rows(&z),
                }
            };
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardPass { pre, post })
    }

    /// Evaluate one input: returns `(output, embedding)`.
    pub fn forward(&self, input: ArrayView1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let batch = input.insert_axis(Axis(0));
        let pass = self.forward_batch(batch)?;
        Ok((
            pass.outputs().row(0).to_owned(),
            pass.embeddings().row(0).to_owned(),
        ))
    }

    /// Write a binary checkpoint: header + all parameters, little-endian.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        bytes.push(self.spec.activation.file_code());
        bytes.push(self.spec.head.file_code());
        bytes.extend_from_slice(&(self.spec.widths.len() as u32).to_le_bytes());
        for &w in &self.spec.widths {
            bytes.extend_from_slice(&(w as u32).to_le_bytes());
        }
        for l in 0..self.spec.layer_count() {
            for v in self.weights[l].iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            for v in self.biases[l].iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, &bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Read a checkpoint written by [`Network::save_checkpoint`].
    pub fn load_checkpoint(path: &Path) -> Result<Network> {
        let pathstr = path.display().to_string();
        let bytes = fs::read(path).map_err(|e| Error::io(&*pathstr, e))?;
        let header_min = 4 + 2 + 1 + 1 + 4;
        if bytes.len() < header_min {
            return Err(Error::MalformedHeader {
                path: pathstr,
                detail: "file shorter than fixed header".into(),
            });
        }
        if &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(Error::MalformedHeader {
                path: pathstr,
                detail: "bad magic (expected \"SGNC\")".into(),
            });
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::MalformedHeader {
                path: pathstr,
                detail: format!("unsupported version {version}"),
            });
        }
        let activation =
            Activation::from_file_code(bytes[6]).ok_or_else(|| Error::MalformedHeader {
                path: pathstr.clone(),
                detail: format!("unknown activation code {}", bytes[6]),
            })?;
        let head = OutputHead::from_file_code(bytes[7]).ok_or_else(|| Error::MalformedHeader {
            path: pathstr.clone(),
            detail: format!("unknown head code {}", bytes[7]),
        })?;
        let n_widths = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut pos = 12;
        if bytes.len() < pos + 4 * n_widths {
            return Err(Error::MalformedHeader {
                path: pathstr,
                detail: "width table truncated".into(),
            });
        }
        let mut widths = Vec::with_capacity(n_widths);
        for _ in 0..n_widths {
            widths.push(u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize);
            pos += 4;
        }
        let spec = NetworkSpec::new(widths, activation, head)?;
        let param_bytes: usize = (0..spec.layer_count())
            .map(|l| 8 * (spec.widths[l] * spec.widths[l + 1] + spec.widths[l + 1]))
            .sum();
        let found = bytes.len() - pos;
        if found != param_bytes {
            return Err(Error::TruncatedFile {
                path: pathstr,
                expected: param_bytes as u64,
                found: found as u64,
            });
        }
        let read_f64 = |pos: &mut usize| {
            let v = f64::from_le_bytes(bytes[*pos..*pos + 8].try_into().unwrap());
            *pos += 8;
            v
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..spec.layer_count() {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            let mut w = Array2::zeros((fan_out, fan_in));
            for v in w.iter_mut() {
                *v = read_f64(&mut pos);
            }
            let mut b = Array1::zeros(fan_out);
            for v in b.iter_mut() {
                *v = read_f64(&mut pos);
            }
            weights.push(w);
            biases.push(b);
        }
        Ok(Network { spec, weights, biases })
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SGNC";
const CHECKPOINT_VERSION: u16 = 1;

/// Row-wise softmax with max-subtraction.
fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}
