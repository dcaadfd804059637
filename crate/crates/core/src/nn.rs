//! Small dense feedforward networks with hand-written backpropagation.
//!
//! Weights are stored row-major as `outputs x inputs`, so a forward pass is
//! one dot product per output unit.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 32];
const CHECKPOINT_FORMAT: &str = "streamsched-densenet";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("tau must lie in (0, 1], got {0}")]
    InvalidTau(f64),
    #[error("learning rate must be positive, got {0}")]
    InvalidLearningRate(f64),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    /// `(tanh(z) + 1) / 2`, i.e. tanh rescaled onto `[0, 1]`.
    UnitTanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::UnitTanh => 0.5 * (z.tanh() + 1.0),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            // y = (t + 1) / 2  =>  dy/dz = (1 - t^2) / 2 = 2 y (1 - y)
            Activation::UnitTanh => 2.0 * y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    /// Row-major, `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            activation,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn random<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs, activation);
        for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *w = rng.random_range(-bound..=bound);
        }
        layer
    }

    #[inline]
    pub fn row(&self, output: usize) -> &[f64] {
        &self.weights[output * self.inputs..(output + 1) * self.inputs]
    }

    fn forward_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.outputs).map(|o| {
            let z = self.bias[o] + dot(self.row(o), input);
            self.activation.apply(z)
        }));
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without fast-math.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = i * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in chunks * 4..a.len() {
        sum += a[k] * b[k];
    }
    sum
}

/// Fully-connected feedforward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Intermediate activations of one forward pass, reused by [`DenseNet::backward`].
#[derive(Debug, Clone, Default)]
pub struct Trace {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    pub activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Parameter gradients, laid out like the network, plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            input: vec![0.0; net.input_dim()],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.params_mut() {
            *v *= factor;
        }
        for v in &mut self.input {
            *v *= factor;
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().flatten().chain(self.bias.iter().flatten())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .flatten()
            .chain(self.bias.iter_mut().flatten())
    }

    pub fn max_abs(&self) -> f64 {
        self.params().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::ArchitectureMismatch("network has no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(NnError::ArchitectureMismatch(format!(
                    "layer emits {} values but the next expects {}",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(NnError::ArchitectureMismatch(format!(
                    "{}x{} layer carries {} weights and {} biases",
                    l.outputs,
                    l.inputs,
                    l.weights.len(),
                    l.bias.len()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialized net with `hidden` activations on every hidden layer.
    pub fn random<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    output_activation
                } else {
                    hidden_activation
                };
                Layer::random(w[0], w[1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn same_architecture(&self, other: &DenseNet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.inputs == b.inputs && a.outputs == b.outputs && a.activation == b.activation
            })
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input)?;
        let mut current = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&current, &mut next);
            std::mem::swap(&mut current, &mut next);
        }
        Ok(current)
    }

    /// Finishes a forward pass from the pre-activations `z` of layer `layer`.
    pub fn forward_from_preactivation(&self, layer: usize, mut z: Vec<f64>) -> Vec<f64> {
        let act = self.layers[layer].activation;
        for v in &mut z {
            *v = act.apply(*v);
        }
        let mut next = Vec::new();
        for l in &self.layers[layer + 1..] {
            l.forward_into(&z, &mut next);
            std::mem::swap(&mut z, &mut next);
        }
        z
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace, NnError> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.forward_into(activations.last().expect("non-empty"), &mut out);
            activations.push(out);
        }
        Ok(Trace { activations })
    }

    /// Gradients of `upstream . output` with respect to every parameter and
    /// to the input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<Gradients, NnError> {
        let trace = self.forward_trace(input)?;
        let mut grads = Gradients::zeros_like(self);
        self.backward_accumulate(&trace, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Adds the gradients for one traced sample into `grads`; the input
    /// gradient is overwritten rather than summed.
    pub fn backward_accumulate(
        &self,
        trace: &Trace,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<(), NnError> {
        if upstream.len() != self.output_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let mut delta: Vec<f64> = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out = &trace.activations[l + 1];
            let inp = &trace.activations[l];
            for (d, y) in delta.iter_mut().zip(out) {
                *d *= layer.activation.derivative(*y);
            }
            let gw = &mut grads.weights[l];
            let gb = &mut grads.bias[l];
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
                if d != 0.0 {
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, x) in row.iter_mut().zip(inp) {
                        *g += d * x;
                    }
                }
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (p, w) in prev.iter_mut().zip(layer.row(o)) {
                        *p += d * w;
                    }
                }
            }
            delta = prev;
        }
        grads.input = delta;
        Ok(())
    }

    /// Gradient with respect to the input only; cheaper than
    /// [`DenseNet::backward`] when parameter gradients are not needed.
    pub fn input_gradient(&self, trace: &Trace, upstream: &[f64]) -> Result<Vec<f64>, NnError> {
        if upstream.len() != self.output_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let mut delta: Vec<f64> = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            for (d, y) in delta.iter_mut().zip(&trace.activations[l + 1]) {
                *d *= layer.activation.derivative(*y);
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (p, w) in prev.iter_mut().zip(layer.row(o)) {
                        *p += d * w;
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    fn check_gradients(&self, grads: &Gradients) -> Result<(), NnError> {
        let shapes_match = grads.weights.len() == self.layers.len()
            && self.layers.iter().enumerate().all(|(i, l)| {
                grads.weights[i].len() == l.weights.len() && grads.bias[i].len() == l.bias.len()
            });
        if !shapes_match {
            return Err(NnError::ArchitectureMismatch(
                "gradient shapes differ from the network".into(),
            ));
        }
        if grads.params().any(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient);
        }
        Ok(())
    }

    /// `theta <- theta - lr * g`.
    pub fn sgd_step(&mut self, grads: &Gradients, config: &SgdConfig) -> Result<(), NnError> {
        self.apply_step(grads, -config.learning_rate)
    }

    /// `theta <- theta + lr * g`, for objectives that are maximized.
    pub fn ascent_step(&mut self, grads: &Gradients, config: &SgdConfig) -> Result<(), NnError> {
        self.apply_step(grads, config.learning_rate)
    }

    fn apply_step(&mut self, grads: &Gradients, signed_lr: f64) -> Result<(), NnError> {
        if !(signed_lr.is_finite() && signed_lr != 0.0) {
            return Err(NnError::InvalidLearningRate(signed_lr.abs()));
        }
        self.check_gradients(grads)?;
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (w, g) in layer.weights.iter_mut().zip(&grads.weights[l]) {
                *w += signed_lr * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(&grads.bias[l]) {
                *b += signed_lr * g;
            }
        }
        Ok(())
    }

    /// `theta' <- tau * theta + (1 - tau) * theta'` applied to `self` as target.
    pub fn soft_update(&mut self, source: &DenseNet, tau: f64) -> Result<(), NnError> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(NnError::InvalidTau(tau));
        }
        if !self.same_architecture(source) {
            return Err(NnError::ArchitectureMismatch(
                "soft update between different architectures".into(),
            ));
        }
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            for (tw, sw) in t.weights.iter_mut().zip(&s.weights) {
                *tw = tau * sw + (1.0 - tau) * *tw;
            }
            for (tb, sb) in t.bias.iter_mut().zip(&s.bias) {
                *tb = tau * sb + (1.0 - tau) * *tb;
            }
        }
        Ok(())
    }

    /// Largest absolute parameter difference.
    pub fn max_abs_diff(&self, other: &DenseNet) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .flat_map(|(a, b)| {
                a.weights
                    .iter()
                    .zip(&b.weights)
                    .chain(a.bias.iter().zip(&b.bias))
            })
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layers: self.layers.clone(),
        }
    }

    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self, NnError> {
        if checkpoint.format != CHECKPOINT_FORMAT {
            return Err(NnError::CorruptCheckpoint(format!(
                "unknown format `{}`",
                checkpoint.format
            )));
        }
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(NnError::CorruptCheckpoint(format!(
                "unsupported version {}",
                checkpoint.version
            )));
        }
        let net = DenseNet::from_layers(checkpoint.layers)
            .map_err(|e| NnError::CorruptCheckpoint(e.to_string()))?;
        if net.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias)).any(|v| !v.is_finite()) {
            return Err(NnError::CorruptCheckpoint("non-finite weight".into()));
        }
        Ok(net)
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        let json = serde_json::to_string(&self.to_checkpoint())
            .map_err(|e| NnError::CorruptCheckpoint(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    /// Reads a checkpoint from disk without any architecture expectation.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let text = fs::read_to_string(path)?;
        let checkpoint: Checkpoint =
            serde_json::from_str(&text).map_err(|e| NnError::CorruptCheckpoint(e.to_string()))?;
        Self::from_checkpoint(checkpoint)
    }

    /// Replaces this net's weights with the checkpoint at `path`, which must
    /// have the same architecture.
    pub fn load_weights(&mut self, path: impl AsRef<Path>) -> Result<(), NnError> {
        let loaded = Self::load(path)?;
        if !self.same_architecture(&loaded) {
            return Err(NnError::ArchitectureMismatch(format!(
                "checkpoint has layers {:?}, network has {:?}",
                loaded.shape(),
                self.shape()
            )));
        }
        *self = loaded;
        Ok(())
    }

    fn shape(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.inputs, l.outputs)).collect()
    }
}

/// Versioned on-disk form of a [`DenseNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
        }
    }
}
