//! Fully connected autoencoder trained with ADAM; the per-sample squared
//! reconstruction error is the anomaly score.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// `N_epochs · N_ex` held fixed across training-set sizes.
pub const EPOCH_BUDGET: usize = 20_000;
/// Largest training set still trained full-batch.
pub const FULL_BATCH_LIMIT: usize = 64;

const MAGIC: &[u8; 4] = b"PMAE";
const FORMAT_VERSION: u32 = 1;
const MAX_LAYERS: usize = 64;
const MAX_WIDTH: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum AeError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// `ln(1 + eˣ)`
    Softplus,
    Identity,
    Tanh,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Softplus => 1,
            Activation::Identity => 2,
            Activation::Tanh => 3,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Activation::Softplus),
            2 => Some(Activation::Identity),
            3 => Some(Activation::Tanh),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Softplus => "softplus",
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = AeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "softplus" => Ok(Activation::Softplus),
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(AeError::Config(format!("unknown activation {s:?}"))),
        }
    }
}

/// Dense layer, weights row-major `(out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.n_in)) {
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpAutoencoder {
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
    activation: Activation,
    seed: u64,
}

/// Gradient with the same layout as the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradient {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    fn zeros_like(model: &MlpAutoencoder) -> Self {
        Gradient {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }
}

fn check_mirrored(dims: &[usize]) -> Result<(), AeError> {
    if dims.len() < 3 || dims.len() % 2 == 0 {
        return Err(AeError::Config(format!("layer dims {dims:?} must be an odd-length list of at least 3")));
    }
    if dims.iter().any(|&d| d == 0 || d > MAX_WIDTH) {
        return Err(AeError::Config(format!("layer widths {dims:?} out of range")));
    }
    let n = dims.len();
    if (0..n / 2).any(|i| dims[i] != dims[n - 1 - i]) {
        return Err(AeError::Config(format!("encoder and decoder of {dims:?} do not mirror")));
    }
    Ok(())
}

impl MlpAutoencoder {
    /// `input → hidden… → latent → …hidden → input`, weights uniform in
    /// `±1/√fan_in`, zero biases.
    pub fn new(input: usize, hidden: &[usize], latent: usize, activation: Activation, seed: u64) -> Result<Self, AeError> {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(latent);
        dims.extend(hidden.iter().rev());
        dims.push(input);
        Self::from_dims(&dims, activation, seed)
    }

    /// The default `n → 16 → 4 → 16 → n` softplus network.
    pub fn default_for(input: usize, seed: u64) -> Self {
        Self::new(input, &[16], 4, Activation::Softplus, seed).expect("valid default architecture")
    }

    pub fn from_dims(dims: &[usize], activation: Activation, seed: u64) -> Result<Self, AeError> {
        check_mirrored(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let bound = 1.0 / (n_in as f64).sqrt();
                Layer {
                    n_in,
                    n_out,
                    weights: (0..n_in * n_out).map(|_| rng.gen_range(-bound..bound)).collect(),
                    bias: vec![0.0; n_out],
                }
            })
            .collect();
        Ok(Self { layer_dims: dims.to_vec(), layers, activation, seed })
    }

    /// Builds a model from explicit layers (validated for chaining and mirroring).
    pub fn from_layers(layers: Vec<Layer>, activation: Activation, seed: u64) -> Result<Self, AeError> {
        if layers.is_empty() {
            return Err(AeError::Config("no layers".into()));
        }
        let mut dims = vec![layers[0].n_in];
        for l in &layers {
            if l.n_in != *dims.last().unwrap() || l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(AeError::Config("layer shapes do not chain".into()));
            }
            dims.push(l.n_out);
        }
        check_mirrored(&dims)?;
        Ok(Self { layer_dims: dims, layers, activation, seed })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer (weights, then biases).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), AeError> {
        if params.len() != self.num_params() {
            return Err(AeError::Dimension(format!("{} parameters for a model with {}", params.len(), self.num_params())));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, r) = r.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<(), AeError> {
        if x.len() != self.input_dim() {
            return Err(AeError::Dimension(format!("input of length {} for a {}-dimensional model", x.len(), self.input_dim())));
        }
        Ok(())
    }

    /// Pre-activations of every layer.
    fn trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&h);
            h = if i == last { z.clone() } else { z.iter().map(|&v| self.activation.apply(v)).collect() };
            pre.push(z);
        }
        pre
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, AeError> {
        self.check_input(x)?;
        Ok(self.trace(x).pop().expect("at least one layer"))
    }

    /// `‖x − y(x)‖²`
    pub fn score(&self, x: &[f64]) -> Result<f64, AeError> {
        let y = self.forward(x)?;
        Ok(x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    /// `Σᵢ ‖xᵢ − y(xᵢ)‖²` over the batch.
    pub fn loss(&self, batch: &[Vec<f64>]) -> Result<f64, AeError> {
        if batch.is_empty() {
            return Err(AeError::EmptyBatch);
        }
        batch.iter().map(|x| self.score(x)).sum()
    }

    fn accumulate_gradient(&self, x: &[f64], grad: &mut Gradient) -> f64 {
        let pre = self.trace(x);
        let last = self.layers.len() - 1;
        let y = &pre[last];
        let mut delta: Vec<f64> = y.iter().zip(x).map(|(y, x)| 2.0 * (y - x)).collect();
        let loss = y.iter().zip(x).map(|(y, x)| (y - x) * (y - x)).sum();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input: Vec<f64> = if i == 0 {
                x.to_vec()
            } else {
                pre[i - 1].iter().map(|&v| self.activation.apply(v)).collect()
            };
            let gw = &mut grad.weights[i];
            for (o, d) in delta.iter().enumerate() {
                let row = &mut gw[o * layer.n_in..(o + 1) * layer.n_in];
                for (g, h) in row.iter_mut().zip(&input) {
                    *g += d * h;
                }
                grad.biases[i][o] += d;
            }
            if i > 0 {
                let mut back = vec![0.0; layer.n_in];
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    for (b, w) in back.iter_mut().zip(row) {
                        *b += d * w;
                    }
                }
                for (b, z) in back.iter_mut().zip(&pre[i - 1]) {
                    *b *= self.activation.derivative(*z);
                }
                delta = back;
            }
        }
        loss
    }

    /// Exact gradient of the batch loss by reverse-mode accumulation.
    pub fn gradient(&self, batch: &[Vec<f64>]) -> Result<Gradient, AeError> {
        Ok(self.loss_and_gradient(batch)?.1)
    }

    pub fn loss_and_gradient(&self, batch: &[Vec<f64>]) -> Result<(f64, Gradient), AeError> {
        if batch.is_empty() {
            return Err(AeError::EmptyBatch);
        }
        let mut grad = Gradient::zeros_like(self);
        let mut loss = 0.0;
        for x in batch {
            self.check_input(x)?;
            loss += self.accumulate_gradient(x, &mut grad);
        }
        Ok((loss, grad))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), AeError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[self.activation.tag()])?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.layer_dims.len() as u32).to_le_bytes())?;
        for &d in &self.layer_dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.bias) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, AeError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Decodes the little-endian model format; rejects truncated input,
    /// trailing bytes and non-finite parameters.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AeError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(AeError::Format("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(AeError::Format(format!("unsupported version {version}")));
        }
        let tag = cur.take(1)?[0];
        let activation = Activation::from_tag(tag).ok_or_else(|| AeError::Format(format!("unknown activation tag {tag}")))?;
        let seed = cur.u64()?;
        let n = cur.u32()? as usize;
        if !(3..=MAX_LAYERS).contains(&n) {
            return Err(AeError::Format(format!("{n} layer dims")));
        }
        let dims = (0..n).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        check_mirrored(&dims).map_err(|e| AeError::Format(e.to_string()))?;
        let mut layers = Vec::with_capacity(n - 1);
        for w in dims.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let count = n_in.checked_mul(n_out).and_then(|c| c.checked_add(n_out));
            let Some(count) = count.filter(|c| c.checked_mul(8).is_some_and(|b| b <= cur.remaining())) else {
                return Err(AeError::Format("truncated parameters".into()));
            };
            let vals = (0..count).map(|_| cur.f64()).collect::<Result<Vec<_>, _>>()?;
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(AeError::Format("non-finite parameter".into()));
            }
            let (weights, bias) = vals.split_at(n_in * n_out);
            layers.push(Layer { n_in, n_out, weights: weights.to_vec(), bias: bias.to_vec() });
        }
        if cur.remaining() != 0 {
            return Err(AeError::Format(format!("{} trailing bytes", cur.remaining())));
        }
        Ok(Self { layer_dims: dims, layers, activation, seed })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AeError> {
        if self.remaining() < n {
            return Err(AeError::Format("unexpected end of input".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32, AeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, AeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, AeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for a training set of `n_examples`: `N_epochs · N_ex` fixed at
    /// [`EPOCH_BUDGET`], full batch up to [`FULL_BATCH_LIMIT`] examples.
    pub fn for_examples(n_examples: usize, seed: u64) -> Self {
        let n = n_examples.max(1);
        TrainConfig {
            learning_rate: 1e-3,
            epochs: (EPOCH_BUDGET / n).max(1),
            batch_size: if n <= FULL_BATCH_LIMIT { n } else { FULL_BATCH_LIMIT },
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), AeError> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.epochs > 0
            && self.batch_size > 0
            && self.adam_beta1 > 0.0
            && self.adam_beta1 < 1.0
            && self.adam_beta2 > 0.0
            && self.adam_beta2 < 1.0
            && self.adam_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(AeError::Config(format!("invalid training configuration {self:?}")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: MlpAutoencoder,
    /// Sum of the mini-batch losses seen during each epoch.
    pub loss_history: Vec<f64>,
}

/// ADAM over shuffled mini-batches (the last partial batch is kept).
/// Deterministic for a given model, data and configuration.
pub fn train(model: &MlpAutoencoder, data: &[Vec<f64>], config: &TrainConfig) -> Result<TrainOutcome, AeError> {
    config.validate()?;
    if data.is_empty() {
        return Err(AeError::EmptyBatch);
    }
    for x in data {
        model.check_input(x)?;
    }
    let mut model = model.clone();
    let mut params = model.params();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0i32;
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let (loss, grad) = model.loss_and_gradient(&batch)?;
            if !loss.is_finite() {
                return Err(AeError::Diverged { epoch, loss });
            }
            epoch_loss += loss;
            step += 1;
            let c1 = 1.0 - config.adam_beta1.powi(step);
            let c2 = 1.0 - config.adam_beta2.powi(step);
            for ((p, g), (mi, vi)) in params.iter_mut().zip(grad.flatten()).zip(m.iter_mut().zip(v.iter_mut())) {
                *mi = config.adam_beta1 * *mi + (1.0 - config.adam_beta1) * g;
                *vi = config.adam_beta2 * *vi + (1.0 - config.adam_beta2) * g * g;
                *p -= config.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + config.adam_eps);
            }
            model.set_params(&params)?;
        }
        history.push(epoch_loss);
    }
    Ok(TrainOutcome { model, loss_history: history })
}
