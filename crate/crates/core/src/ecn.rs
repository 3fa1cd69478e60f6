//! Exoskeleton control network: a ReLU multilayer perceptron with a tanh head
//! mapping a four-step kinematics history to normalized hip/knee torques.
//!
//! Inputs are standardized with per-feature statistics stored in the model, so
//! a saved model is self-contained at inference time. Training minimizes
//!
//! ```text
//! L = mean_over_batch( |target - out|^2 + w_reg * |out|^2 )
//! ```
//!
//! with exact backpropagation and seeded mini-batch momentum descent.

use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Joint, Trial};
use crate::signal::WORKING_RATE_HZ;

pub const HISTORY_STEPS: usize = 4;
pub const FEATURES_PER_STEP: usize = 8;
pub const FEATURE_LEN: usize = HISTORY_STEPS * FEATURES_PER_STEP + 1;
pub const OUTPUT_LEN: usize = 4;
pub const LAYER_DIMS: [usize; 5] = [FEATURE_LEN, 64, 64, 64, OUTPUT_LEN];
pub const DEFAULT_DELAY_S: f64 = 0.025;
pub const TAU_MAX_NM: f64 = 50.0;
pub const DEFAULT_W_REG: f64 = 0.01;
pub const SCHEMA_VERSION: u32 = 1;
pub const FEATURE_ORDER_TAG: &str =
    "steps:t-3..t|joints:hip_l,hip_r,knee_l,knee_r|per_joint:angle_rad,velocity_rad_s|tail:delay_s";

/// Std floor for standardization; constant columns (e.g. a fixed delay) hit it.
const STD_FLOOR: f64 = 1e-6;
/// Largest double below 1. Keeps outputs strictly inside (-1, 1).
const TANH_BOUND: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Error)]
pub enum EcnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("trial must be sampled at {expected} Hz, got {got} Hz")]
    RateMismatch { expected: f64, got: f64 },
    #[error("trial has no velocity channels")]
    MissingVelocities,
    #[error("invalid feature window: {0}")]
    InvalidWindow(String),
    #[error("invalid training target: {0}")]
    InvalidTarget(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("insufficient samples: batch size {batch_size} but only {got} samples")]
    InsufficientSamples { batch_size: usize, got: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("feature order mismatch: model expects `{model}`, pipeline produces `{pipeline}`")]
    FeatureOrderMismatch { model: String, pipeline: String },
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("checksum mismatch: stored {stored}, computed {computed}")]
    ChecksumMismatch { stored: String, computed: String },
    #[error("architecture {found:?} differs from {expected:?}")]
    ShapeError {
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Network input: for each of four steps (oldest first) and each joint in
/// [`Joint::ALL`] order, angle then velocity; the delay parameter last.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureWindow([f64; FEATURE_LEN]);

impl FeatureWindow {
    pub fn new(features: [f64; FEATURE_LEN]) -> Result<Self, EcnError> {
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(EcnError::InvalidWindow(format!("non-finite feature {i}")));
        }
        if features[FEATURE_LEN - 1] < 0.0 {
            return Err(EcnError::InvalidWindow("negative delay".into()));
        }
        Ok(Self(features))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn delay_s(&self) -> f64 {
        self.0[FEATURE_LEN - 1]
    }

    pub fn index_of(step: usize, joint: Joint, velocity: bool) -> usize {
        step * FEATURES_PER_STEP + joint.index() * 2 + usize::from(velocity)
    }
}

/// Build one window per sample index `i >= 3` from a 100 Hz trial.
pub fn build_windows(trial: &Trial, delay_s: f64) -> Result<Vec<FeatureWindow>, EcnError> {
    if (trial.sample_rate_hz - WORKING_RATE_HZ).abs() > 1e-9 {
        return Err(EcnError::RateMismatch {
            expected: WORKING_RATE_HZ,
            got: trial.sample_rate_hz,
        });
    }
    let vel = trial
        .velocities_rad_s
        .as_ref()
        .ok_or(EcnError::MissingVelocities)?;
    let n = trial.len();
    if n < HISTORY_STEPS {
        return Err(EcnError::TooShort {
            needed: HISTORY_STEPS,
            got: n,
        });
    }
    if !(delay_s.is_finite() && delay_s >= 0.0) {
        return Err(EcnError::InvalidWindow(format!("delay {delay_s}")));
    }
    (HISTORY_STEPS - 1..n)
        .map(|i| {
            let mut f = [0.0; FEATURE_LEN];
            for step in 0..HISTORY_STEPS {
                let t = i + 1 + step - HISTORY_STEPS;
                for joint in Joint::ALL {
                    let j = joint.index();
                    f[FeatureWindow::index_of(step, joint, false)] = trial.angles_rad[j][t];
                    f[FeatureWindow::index_of(step, joint, true)] = vel[j][t];
                }
            }
            f[FEATURE_LEN - 1] = delay_s;
            FeatureWindow::new(f)
        })
        .collect()
}

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn glorot(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (o, z) in out.iter_mut().enumerate() {
            *z = self.bias[o] + dot(self.row(o), x);
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-feature standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    pub fn identity(len: usize) -> Self {
        Self {
            mean: vec![0.0; len],
            std: vec![1.0; len],
        }
    }

    /// Mean and population std of each feature, std floored at 1e-6.
    pub fn fit(samples: &[TrainSample]) -> Self {
        let n = samples.len() as f64;
        let mut mean = vec![0.0; FEATURE_LEN];
        for s in samples {
            for (m, x) in mean.iter_mut().zip(s.input.as_slice()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; FEATURE_LEN];
        for s in samples {
            for ((v, x), m) in var.iter_mut().zip(s.input.as_slice()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (x[i] - self.mean[i]) / self.std[i];
        }
    }
}

/// One supervised example: window and normalized target torques.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSample {
    pub input: FeatureWindow,
    pub target: [f64; OUTPUT_LEN],
}

impl TrainSample {
    pub fn new(input: FeatureWindow, target: [f64; OUTPUT_LEN]) -> Result<Self, EcnError> {
        if target.iter().any(|t| !t.is_finite() || t.abs() > 1.0) {
            return Err(EcnError::InvalidTarget(format!("{target:?}")));
        }
        Ok(Self { input, target })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcnModel {
    layers: Vec<Dense>,
    input_norm: InputNorm,
    feature_order_tag: String,
    tau_max_nm: f64,
}

/// Parameter-shaped gradient, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<Dense>);

impl Gradient {
    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// Buffers reused across samples by forward/backward passes.
struct Workspace {
    input: Vec<f64>,
    /// Post-activation output of each layer.
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl EcnModel {
    /// Validate and assemble a model from parts.
    pub fn from_parts(
        layers: Vec<Dense>,
        input_norm: InputNorm,
        feature_order_tag: impl Into<String>,
        tau_max_nm: f64,
    ) -> Result<Self, EcnError> {
        let model = Self {
            layers,
            input_norm,
            feature_order_tag: feature_order_tag.into(),
            tau_max_nm,
        };
        model.validate()?;
        Ok(model)
    }

    /// All-zero parameters with identity normalization.
    pub fn zeros(dims: &[usize]) -> Result<Self, EcnError> {
        let layers = dims.windows(2).map(|d| Dense::zeros(d[0], d[1])).collect();
        Self::from_parts(
            layers,
            InputNorm::identity(dims.first().copied().unwrap_or(0)),
            FEATURE_ORDER_TAG,
            TAU_MAX_NM,
        )
    }

    /// Glorot-uniform weights, zero biases, identity normalization.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self, EcnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(
            dims,
            &mut rng,
            InputNorm::identity(dims.first().copied().unwrap_or(0)),
        )
    }

    fn init_with(dims: &[usize], rng: &mut impl Rng, norm: InputNorm) -> Result<Self, EcnError> {
        let layers = dims
            .windows(2)
            .map(|d| Dense::glorot(d[0], d[1], rng))
            .collect();
        Self::from_parts(layers, norm, FEATURE_ORDER_TAG, TAU_MAX_NM)
    }

    fn validate(&self) -> Result<(), EcnError> {
        let bad = |m: String| Err(EcnError::InvalidModel(m));
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 {
                return bad(format!("layer {k} has a zero dimension"));
            }
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return bad(format!(
                    "layer {k} buffers do not match {}x{}",
                    l.outputs, l.inputs
                ));
            }
            if k > 0 && self.layers[k - 1].outputs != l.inputs {
                return bad(format!("layer {k} input does not chain"));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return bad(format!("layer {k} has non-finite parameters"));
            }
        }
        let n_in = self.layers[0].inputs;
        let norm = &self.input_norm;
        if norm.mean.len() != n_in || norm.std.len() != n_in {
            return bad("input normalization length".into());
        }
        if norm.mean.iter().any(|m| !m.is_finite())
            || norm.std.iter().any(|s| !(s.is_finite() && *s > 0.0))
        {
            return bad("input normalization must be finite with std > 0".into());
        }
        if !(self.tau_max_nm.is_finite() && self.tau_max_nm > 0.0) {
            return bad(format!("tau_max_nm {}", self.tau_max_nm));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_norm(&self) -> &InputNorm {
        &self.input_norm
    }

    pub fn feature_order_tag(&self) -> &str {
        &self.feature_order_tag
    }

    pub fn tau_max_nm(&self) -> f64 {
        self.tau_max_nm
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Fail unless the model was trained on windows in `expected` order.
    pub fn ensure_feature_order(&self, expected: &str) -> Result<(), EcnError> {
        if self.feature_order_tag != expected {
            return Err(EcnError::FeatureOrderMismatch {
                model: self.feature_order_tag.clone(),
                pipeline: expected.to_string(),
            });
        }
        Ok(())
    }

    fn workspace(&self) -> Workspace {
        Workspace {
            input: vec![0.0; self.input_len()],
            acts: self.layers.iter().map(|l| vec![0.0; l.outputs]).collect(),
            deltas: self.layers.iter().map(|l| vec![0.0; l.outputs]).collect(),
        }
    }

    fn forward_into(&self, x: &[f64], ws: &mut Workspace) {
        self.input_norm.apply(x, &mut ws.input);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (prev, rest) = ws.acts.split_at_mut(k);
            let src: &[f64] = if k == 0 { &ws.input } else { &prev[k - 1] };
            let out = &mut rest[0];
            layer.affine(src, out);
            if k == last {
                out.iter_mut()
                    .for_each(|z| *z = z.tanh().clamp(-TANH_BOUND, TANH_BOUND));
            } else {
                out.iter_mut().for_each(|z| *z = z.max(0.0));
            }
        }
    }

    /// Raw forward pass on an unnormalized input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, EcnError> {
        if x.len() != self.input_len() {
            return Err(EcnError::DimensionMismatch {
                expected: self.input_len(),
                got: x.len(),
            });
        }
        let mut ws = self.workspace();
        self.forward_into(x, &mut ws);
        Ok(ws.acts.pop().unwrap_or_default())
    }

    /// Normalized torque command for one window, each entry in (-1, 1).
    pub fn predict(&self, window: &FeatureWindow) -> Result<[f64; OUTPUT_LEN], EcnError> {
        self.check_io()?;
        let out = self.forward(window.as_slice())?;
        Ok(std::array::from_fn(|k| out[k]))
    }

    pub fn predict_all(
        &self,
        windows: &[FeatureWindow],
    ) -> Result<Vec<[f64; OUTPUT_LEN]>, EcnError> {
        self.check_io()?;
        let mut ws = self.workspace();
        let last = self.layers.len() - 1;
        Ok(windows
            .iter()
            .map(|w| {
                self.forward_into(w.as_slice(), &mut ws);
                std::array::from_fn(|k| ws.acts[last][k])
            })
            .collect())
    }

    fn check_io(&self) -> Result<(), EcnError> {
        if self.input_len() != FEATURE_LEN {
            return Err(EcnError::DimensionMismatch {
                expected: FEATURE_LEN,
                got: self.input_len(),
            });
        }
        if self.output_len() != OUTPUT_LEN {
            return Err(EcnError::DimensionMismatch {
                expected: OUTPUT_LEN,
                got: self.output_len(),
            });
        }
        Ok(())
    }

    /// Mean over the batch of `|target - out|^2 + w_reg * |out|^2`.
    pub fn loss(&self, batch: &[TrainSample], w_reg: f64) -> Result<f64, EcnError> {
        self.check_io()?;
        if batch.is_empty() {
            return Err(EcnError::EmptyBatch);
        }
        let mut ws = self.workspace();
        let last = self.layers.len() - 1;
        let mut total = 0.0;
        for s in batch {
            self.forward_into(s.input.as_slice(), &mut ws);
            total += sample_loss(&ws.acts[last], &s.target, w_reg);
        }
        Ok(total / batch.len() as f64)
    }

    /// Exact gradient of [`EcnModel::loss`] with respect to every weight and bias.
    pub fn grad(&self, batch: &[TrainSample], w_reg: f64) -> Result<Gradient, EcnError> {
        self.check_io()?;
        if batch.is_empty() {
            return Err(EcnError::EmptyBatch);
        }
        let mut g = self.zero_grad();
        let mut ws = self.workspace();
        for s in batch {
            self.backprop(s, w_reg, 1.0 / batch.len() as f64, &mut ws, &mut g);
        }
        Ok(g)
    }

    fn zero_grad(&self) -> Gradient {
        Gradient(
            self.layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        )
    }

    /// Accumulate `scale * d(sample_loss)/d(params)` into `g`.
    fn backprop(
        &self,
        s: &TrainSample,
        w_reg: f64,
        scale: f64,
        ws: &mut Workspace,
        g: &mut Gradient,
    ) {
        self.forward_into(s.input.as_slice(), ws);
        let last = self.layers.len() - 1;
        for (k, d) in ws.deltas[last].iter_mut().enumerate() {
            let y = ws.acts[last][k];
            let dy = 2.0 * scale * ((y - s.target[k]) + w_reg * y);
            *d = dy * (1.0 - y * y);
        }
        for k in (0..=last).rev() {
            let layer = &self.layers[k];
            let gl = &mut g.0[k];
            let src: &[f64] = if k == 0 { &ws.input } else { &ws.acts[k - 1] };
            let delta = &ws.deltas[k];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gl.bias[o] += d;
                let row = &mut gl.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, a) in row.iter_mut().zip(src) {
                    *gw += d * a;
                }
            }
            if k == 0 {
                break;
            }
            let (lower, upper) = ws.deltas.split_at_mut(k);
            let prev = &mut lower[k - 1];
            prev.iter_mut().for_each(|p| *p = 0.0);
            for (o, &d) in upper[0].iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(layer.row(o)) {
                    *p += w * d;
                }
            }
            // ReLU gate: activation is zero exactly where the unit was inactive.
            for (p, a) in prev.iter_mut().zip(&ws.acts[k - 1]) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
        }
    }

    /// CRC-32 of the serialized parameter payload.
    pub fn checksum(&self) -> u32 {
        crc32fast::hash(&self.payload())
    }

    /// Parameters as little-endian f64: for each layer, weights row-major then bias.
    pub fn payload(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.param_count() * 8);
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.bias) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }
}

fn sample_loss(out: &[f64], target: &[f64], w_reg: f64) -> f64 {
    out.iter()
        .zip(target)
        .map(|(y, t)| (t - y) * (t - y) + w_reg * y * y)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub w_reg: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            w_reg: DEFAULT_W_REG,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 256,
            epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), EcnError> {
        let bad = |m: &str| Err(EcnError::InvalidConfig(m.into()));
        if !(self.w_reg.is_finite() && self.w_reg >= 0.0) {
            return bad("w_reg must be >= 0");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be >= 0");
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return bad("momentum must be in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be > 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EcnModel,
    /// Full-set loss before the first update.
    pub initial_loss: f64,
    /// Full-set loss after each epoch.
    pub loss_history: Vec<f64>,
}

/// Train a fresh [`LAYER_DIMS`] network.
pub fn train(samples: &[TrainSample], cfg: &TrainConfig) -> Result<TrainOutcome, EcnError> {
    train_with_dims(samples, cfg, &LAYER_DIMS)
}

/// Mini-batch gradient descent with momentum (`v = mu*v + g; p -= lr*v`).
/// Initialization and shuffle order both derive from `cfg.seed`.
pub fn train_with_dims(
    samples: &[TrainSample],
    cfg: &TrainConfig,
    dims: &[usize],
) -> Result<TrainOutcome, EcnError> {
    cfg.validate()?;
    if samples.len() < cfg.batch_size {
        return Err(EcnError::InsufficientSamples {
            batch_size: cfg.batch_size,
            got: samples.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = EcnModel::init_with(dims, &mut rng, InputNorm::fit(samples))?;
    model.check_io()?;

    let mut velocity = model.zero_grad();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut ws = model.workspace();
    let initial_loss = model.loss(samples, cfg.w_reg)?;
    let mut loss_history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut g = model.zero_grad();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                model.backprop(&samples[i], cfg.w_reg, scale, &mut ws, &mut g);
            }
            for ((layer, v), gl) in model.layers.iter_mut().zip(&mut velocity.0).zip(&g.0) {
                let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
                let vel = v.weights.iter_mut().chain(v.bias.iter_mut());
                let grads = gl.weights.iter().chain(&gl.bias);
                for ((p, v), g) in params.zip(vel).zip(grads) {
                    *v = cfg.momentum * *v + g;
                    *p -= cfg.learning_rate * *v;
                }
            }
        }
        loss_history.push(model.loss(samples, cfg.w_reg)?);
    }
    Ok(TrainOutcome {
        model,
        initial_loss,
        loss_history,
    })
}

// --- model file -----------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema_version: u32,
    layer_dims: Vec<usize>,
    activations: Vec<String>,
    feature_order_tag: String,
    tau_max_nm: f64,
    input_norm: InputNorm,
    weights_b64: String,
    checksum: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

fn activations_for(n_layers: usize) -> Vec<String> {
    (0..n_layers)
        .map(|k| if k + 1 == n_layers { "tanh" } else { "relu" }.to_string())
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Accept layer shapes other than [`LAYER_DIMS`].
    pub allow_custom_architecture: bool,
}

/// Serialize a model to its JSON envelope.
pub fn model_to_json(
    model: &EcnModel,
    provenance: Option<serde_json::Value>,
) -> Result<String, EcnError> {
    let payload = model.payload();
    let file = ModelFile {
        schema_version: SCHEMA_VERSION,
        layer_dims: model.layer_dims(),
        activations: activations_for(model.layers.len()),
        feature_order_tag: model.feature_order_tag.clone(),
        tau_max_nm: model.tau_max_nm,
        input_norm: model.input_norm.clone(),
        checksum: format!("{:08x}", crc32fast::hash(&payload)),
        weights_b64: B64.encode(&payload),
        provenance,
    };
    let mut s =
        serde_json::to_string_pretty(&file).map_err(|e| EcnError::Malformed(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_json(text: &str, opts: LoadOptions) -> Result<EcnModel, EcnError> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| EcnError::Malformed(e.to_string()))?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(EcnError::SchemaVersionMismatch {
            found: file.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    if !opts.allow_custom_architecture && file.layer_dims != LAYER_DIMS {
        return Err(EcnError::ShapeError {
            found: file.layer_dims,
            expected: LAYER_DIMS.to_vec(),
        });
    }
    if file.layer_dims.len() < 2 {
        return Err(EcnError::Malformed("need at least two layer dims".into()));
    }
    if file.activations != activations_for(file.layer_dims.len() - 1) {
        return Err(EcnError::Malformed(format!(
            "unsupported activations {:?}",
            file.activations
        )));
    }
    let payload = B64
        .decode(file.weights_b64.as_bytes())
        .map_err(|e| EcnError::Malformed(format!("weights_b64: {e}")))?;
    let computed = format!("{:08x}", crc32fast::hash(&payload));
    if computed != file.checksum.to_ascii_lowercase() {
        return Err(EcnError::ChecksumMismatch {
            stored: file.checksum,
            computed,
        });
    }
    let expected_len: usize = file
        .layer_dims
        .windows(2)
        .map(|d| (d[0] * d[1] + d[1]) * 8)
        .sum();
    if payload.len() != expected_len {
        return Err(EcnError::Malformed(format!(
            "payload has {} bytes, layer dims need {expected_len}",
            payload.len()
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let layers = file
        .layer_dims
        .windows(2)
        .map(|d| {
            let (inputs, outputs) = (d[0], d[1]);
            Dense {
                inputs,
                outputs,
                weights: values.by_ref().take(inputs * outputs).collect(),
                bias: values.by_ref().take(outputs).collect(),
            }
        })
        .collect();
    EcnModel::from_parts(
        layers,
        file.input_norm,
        file.feature_order_tag,
        file.tau_max_nm,
    )
}

pub fn save_model(
    model: &EcnModel,
    path: &Path,
    provenance: Option<serde_json::Value>,
) -> Result<(), EcnError> {
    let text = model_to_json(model, provenance)?;
    fs::write(path, text).map_err(|source| EcnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path, opts: LoadOptions) -> Result<EcnModel, EcnError> {
    let text = fs::read_to_string(path).map_err(|source| EcnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    model_from_json(&text, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Condition;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_window(rng: &mut impl Rng) -> FeatureWindow {
        let mut f: [f64; FEATURE_LEN] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        f[FEATURE_LEN - 1] = DEFAULT_DELAY_S;
        FeatureWindow::new(f).unwrap()
    }

    fn random_batch(rng: &mut impl Rng, n: usize) -> Vec<TrainSample> {
        (0..n)
            .map(|_| {
                let w = random_window(rng);
                let t = std::array::from_fn(|_| rng.random_range(-0.9..0.9));
                TrainSample::new(w, t).unwrap()
            })
            .collect()
    }

    fn trial_with(n: usize, angle: f64, vel: f64, rate: f64) -> Trial {
        Trial {
            subject_id: "S".into(),
            condition: Condition::LevelGround { speed_mps: 1.2 },
            sample_rate_hz: rate,
            time_s: (0..n).map(|i| i as f64 / rate).collect(),
            angles_rad: std::array::from_fn(|_| vec![angle; n]),
            velocities_rad_s: Some(std::array::from_fn(|_| vec![vel; n])),
            gt_moments_nm_per_kg: None,
            body_mass_kg: None,
        }
    }

    #[test]
    fn window_counts() {
        assert_eq!(
            build_windows(&trial_with(4, 0.0, 0.0, 100.0), 0.0)
                .unwrap()
                .len(),
            1
        );
        assert_eq!(
            build_windows(&trial_with(103, 0.0, 0.0, 100.0), 0.0)
                .unwrap()
                .len(),
            100
        );
        assert!(matches!(
            build_windows(&trial_with(3, 0.0, 0.0, 100.0), 0.0),
            Err(EcnError::TooShort { .. })
        ));
        assert!(matches!(
            build_windows(&trial_with(10, 0.0, 0.0, 200.0), 0.0),
            Err(EcnError::RateMismatch { .. })
        ));
        let mut t = trial_with(10, 0.0, 0.0, 100.0);
        t.velocities_rad_s = None;
        assert!(matches!(
            build_windows(&t, 0.0),
            Err(EcnError::MissingVelocities)
        ));
    }

    #[test]
    fn constant_window_layout() {
        let w = build_windows(&trial_with(4, 0.5, 0.0, 100.0), 0.025).unwrap()[0];
        let mut expected = Vec::new();
        for _ in 0..16 {
            expected.extend([0.5, 0.0]);
        }
        expected.push(0.025);
        assert_eq!(w.as_slice(), expected.as_slice());
    }

    #[test]
    fn window_orders_oldest_first() {
        let mut t = trial_with(6, 0.0, 0.0, 100.0);
        for j in 0..4 {
            t.angles_rad[j] = (0..6).map(|i| (10 * j + i) as f64).collect();
            t.velocities_rad_s.as_mut().unwrap()[j] =
                (0..6).map(|i| -((10 * j + i) as f64)).collect();
        }
        let ws = build_windows(&t, 0.0).unwrap();
        let last = ws[2].as_slice();
        // window 2 covers samples 2..=5
        assert_eq!(last[FeatureWindow::index_of(0, Joint::HipL, false)], 2.0);
        assert_eq!(last[FeatureWindow::index_of(3, Joint::HipL, false)], 5.0);
        assert_eq!(last[FeatureWindow::index_of(3, Joint::KneeR, false)], 35.0);
        assert_eq!(last[FeatureWindow::index_of(1, Joint::HipR, true)], -13.0);
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = EcnModel::zeros(&LAYER_DIMS).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = m.predict(&random_window(&mut rng)).unwrap();
        assert_eq!(out, [0.0; 4]);
    }

    #[test]
    fn miniature_network_by_hand() {
        // 2 -> 2 -> 1. Hidden: h1 = relu(x1 - x2 + 0.5), h2 = relu(2*x2 - 1)
        // Output: tanh(0.5*h1 - h2 + 0.1). Input norm: mean [1, 0], std [2, 1].
        let layers = vec![
            Dense {
                inputs: 2,
                outputs: 2,
                weights: vec![1.0, -1.0, 0.0, 2.0],
                bias: vec![0.5, -1.0],
            },
            Dense {
                inputs: 2,
                outputs: 1,
                weights: vec![0.5, -1.0],
                bias: vec![0.1],
            },
        ];
        let norm = InputNorm {
            mean: vec![1.0, 0.0],
            std: vec![2.0, 1.0],
        };
        let m = EcnModel::from_parts(layers, norm, "mini", 50.0).unwrap();
        // x = [3, 0.75] -> x_hat = [1, 0.75]; h1 = 0.75, h2 = 0.5
        // out = tanh(0.375 - 0.5 + 0.1) = tanh(-0.025)
        let y = m.forward(&[3.0, 0.75]).unwrap();
        assert!((y[0] - (-0.025f64).tanh()).abs() < 1e-15);
        // x = [1, 0] -> h1 = 0.5, h2 = relu(-1) = 0 -> tanh(0.35)
        let y = m.forward(&[1.0, 0.0]).unwrap();
        assert!((y[0] - 0.35f64.tanh()).abs() < 1e-15);
        assert!(matches!(
            m.forward(&[1.0]),
            Err(EcnError::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn saturated_output_stays_open_interval() {
        let mut m = EcnModel::zeros(&LAYER_DIMS).unwrap();
        m.layers_mut()[3].bias = vec![100.0, -100.0, 30.0, -30.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = m.predict(&random_window(&mut rng)).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1.0), "{out:?}");
    }

    #[test]
    fn invalid_models_are_rejected() {
        let layers = vec![Dense::zeros(3, 2), Dense::zeros(3, 1)];
        assert!(EcnModel::from_parts(layers, InputNorm::identity(3), "x", 50.0).is_err());
        let norm = InputNorm {
            mean: vec![0.0; 2],
            std: vec![1.0, 0.0],
        };
        assert!(EcnModel::from_parts(vec![Dense::zeros(2, 1)], norm, "x", 50.0).is_err());
    }

    #[test]
    fn loss_hand_cases() {
        let w = FeatureWindow::new([0.0; FEATURE_LEN]).unwrap();
        let m = EcnModel::zeros(&LAYER_DIMS).unwrap();
        let s = TrainSample::new(w, [0.0; 4]).unwrap();
        assert_eq!(m.loss(&[s], 0.01).unwrap(), 0.0);
        assert!(matches!(m.loss(&[], 0.01), Err(EcnError::EmptyBatch)));

        // Output 0.5 on joint 0 through the bias: tanh(b) = 0.5.
        let mut m = m;
        m.layers_mut()[3].bias[0] = 0.5f64.atanh();
        let s = TrainSample::new(w, [1.0, 0.0, 0.0, 0.0]).unwrap();
        let l = m.loss(&[s], 0.01).unwrap();
        assert!((l - 0.2525).abs() < 1e-12, "{l}");
        assert!((m.loss(&[s], 0.0).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_model_zero_data_has_zero_gradient() {
        let m = EcnModel::zeros(&LAYER_DIMS).unwrap();
        let s =
            TrainSample::new(FeatureWindow::new([0.0; FEATURE_LEN]).unwrap(), [0.0; 4]).unwrap();
        assert_eq!(m.grad(&[s], 0.01).unwrap().max_abs(), 0.0);
    }

    /// Central-difference derivative of the loss w.r.t. one parameter.
    fn fd(m: &EcnModel, batch: &[TrainSample], w_reg: f64, layer: usize, idx: usize) -> f64 {
        let h = 1e-5;
        let nw = m.layers[layer].weights.len();
        let bump = |delta: f64| {
            let mut p = m.clone();
            let l = &mut p.layers[layer];
            if idx < nw {
                l.weights[idx] += delta;
            } else {
                l.bias[idx - nw] += delta;
            }
            p.loss(batch, w_reg).unwrap()
        };
        (bump(h) - bump(-h)) / (2.0 * h)
    }

    #[test]
    fn small_model_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = [FEATURE_LEN, 6, 5, 4, OUTPUT_LEN];
        let mut m = EcnModel::init(&dims, 7).unwrap();
        for l in m.layers_mut() {
            l.bias
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
        let batch = random_batch(&mut rng, 5);
        let g = m.grad(&batch, 0.01).unwrap();
        for (k, gl) in g.0.iter().enumerate() {
            for (idx, a) in gl.weights.iter().chain(&gl.bias).enumerate() {
                let n = fd(&m, &batch, 0.01, k, idx);
                let denom = a.abs().max(n.abs()).max(1e-8);
                assert!(
                    (a - n).abs() / denom < 1e-4,
                    "layer {k} idx {idx}: {a} vs {n}"
                );
            }
        }
    }

    #[test]
    fn regularizer_gradient_is_linear_in_w_reg() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = [FEATURE_LEN, 8, 8, 8, OUTPUT_LEN];
        let m = EcnModel::init(&dims, 9).unwrap();
        let batch = random_batch(&mut rng, 4);
        let g0 = m.grad(&batch, 0.0).unwrap();
        let g1 = m.grad(&batch, 0.01).unwrap();
        let g2 = m.grad(&batch, 0.02).unwrap();
        // d/dw_reg of the gradient is constant: g2 - g1 == g1 - g0.
        for k in 0..g0.0.len() {
            let it = |g: &Gradient| -> Vec<f64> {
                g.0[k].weights.iter().chain(&g.0[k].bias).copied().collect()
            };
            let (a, b, c) = (it(&g0), it(&g1), it(&g2));
            for i in 0..a.len() {
                assert!(((c[i] - b[i]) - (b[i] - a[i])).abs() < 1e-12);
            }
        }
        // and the regularizer part equals the finite difference of the losses in w_reg
        let reg_part = |k: usize, idx: usize| {
            let nw = g0.0[k].weights.len();
            let pick = |g: &Gradient| {
                if idx < nw {
                    g.0[k].weights[idx]
                } else {
                    g.0[k].bias[idx - nw]
                }
            };
            pick(&g1) - pick(&g0)
        };
        let fd_reg = fd(&m, &batch, 0.01, 3, 2) - fd(&m, &batch, 0.0, 3, 2);
        assert!((reg_part(3, 2) - fd_reg).abs() < 1e-8);
    }

    #[test]
    fn train_rejects_small_sets_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = random_batch(&mut rng, 40);
        let cfg = TrainConfig {
            batch_size: 64,
            ..Default::default()
        };
        assert!(matches!(
            train(&batch, &cfg),
            Err(EcnError::InsufficientSamples {
                batch_size: 64,
                got: 40
            })
        ));
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 3,
            seed: 42,
            ..Default::default()
        };
        let a = train(&batch, &cfg).unwrap();
        let b = train(&batch, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.loss_history.len(), 3);
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = random_batch(&mut rng, 32);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 8,
            epochs: 4,
            seed: 1,
            ..Default::default()
        };
        let out = train(&batch, &cfg).unwrap();
        let mut init_rng = ChaCha8Rng::seed_from_u64(1);
        let fresh =
            EcnModel::init_with(&LAYER_DIMS, &mut init_rng, InputNorm::fit(&batch)).unwrap();
        assert_eq!(out.model, fresh);
        assert!(out.loss_history.iter().all(|&l| l == out.initial_loss));
    }

    #[test]
    fn constant_delay_feature_gets_floored_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = random_batch(&mut rng, 16);
        let norm = InputNorm::fit(&batch);
        assert_eq!(norm.std[FEATURE_LEN - 1], 1e-6);
        assert!((norm.mean[FEATURE_LEN - 1] - DEFAULT_DELAY_S).abs() < 1e-15);
    }

    #[test]
    fn model_file_round_trip_and_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut m = EcnModel::init(&LAYER_DIMS, 3).unwrap();
        m.input_norm = InputNorm::fit(&random_batch(&mut rng, 10));
        let text = model_to_json(&m, None).unwrap();
        let back = model_from_json(&text, LoadOptions::default()).unwrap();
        assert_eq!(back, m);
        for _ in 0..100 {
            let w = random_window(&mut rng);
            assert_eq!(back.predict(&w).unwrap(), m.predict(&w).unwrap());
        }

        let mut file: serde_json::Value = serde_json::from_str(&text).unwrap();
        let mut payload = B64.decode(file["weights_b64"].as_str().unwrap()).unwrap();
        payload[100] ^= 0x01;
        file["weights_b64"] = B64.encode(&payload).into();
        assert!(matches!(
            model_from_json(&file.to_string(), LoadOptions::default()),
            Err(EcnError::ChecksumMismatch { .. })
        ));

        let mut v2: serde_json::Value = serde_json::from_str(&text).unwrap();
        v2["schema_version"] = 2.into();
        assert!(matches!(
            model_from_json(&v2.to_string(), LoadOptions::default()),
            Err(EcnError::SchemaVersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn nonstandard_architecture_needs_override() {
        let m = EcnModel::init(&[FEATURE_LEN, 64, OUTPUT_LEN], 1).unwrap();
        let text = model_to_json(&m, None).unwrap();
        assert!(matches!(
            model_from_json(&text, LoadOptions::default()),
            Err(EcnError::ShapeError { .. })
        ));
        let opts = LoadOptions {
            allow_custom_architecture: true,
        };
        assert_eq!(model_from_json(&text, opts).unwrap(), m);
    }

    #[test]
    fn feature_order_mismatch_is_hard_error() {
        let layers = vec![Dense::zeros(FEATURE_LEN, OUTPUT_LEN)];
        let m =
            EcnModel::from_parts(layers, InputNorm::identity(FEATURE_LEN), "other", 50.0).unwrap();
        assert!(matches!(
            m.ensure_feature_order(FEATURE_ORDER_TAG),
            Err(EcnError::FeatureOrderMismatch { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn outputs_in_open_interval(seed in any::<u64>(), scale in 0.1f64..50.0) {
            let mut m = EcnModel::init(&LAYER_DIMS, seed).unwrap();
            for l in m.layers_mut() {
                l.weights.iter_mut().for_each(|w| *w *= scale);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
            let out = m.predict(&random_window(&mut rng)).unwrap();
            prop_assert!(out.iter().all(|v| v.abs() < 1.0));
        }

        #[test]
        fn lipschitz_bound(seed in any::<u64>(), feature in 0usize..FEATURE_LEN, eps in 1e-4f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = EcnModel::init(&LAYER_DIMS, seed).unwrap();
            m.input_norm = InputNorm::fit(&random_batch(&mut rng, 20));
            let w = random_window(&mut rng);
            let mut bumped = *w.as_slice().first_chunk::<FEATURE_LEN>().unwrap();
            bumped[feature] += eps;
            let a = m.forward(w.as_slice()).unwrap();
            let b = m.forward(&bumped).unwrap();
            let change = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            // Frobenius norms bound the operator norms; relu and tanh are 1-Lipschitz.
            let bound = eps / m.input_norm.std[feature]
                * m.layers().iter().map(Dense::frobenius_norm).product::<f64>();
            prop_assert!(change <= bound * (1.0 + 1e-12) + 1e-15);
        }

        #[test]
        fn loss_ignores_sample_order(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = EcnModel::init(&LAYER_DIMS, seed).unwrap();
            let batch = random_batch(&mut rng, 7);
            let mut rev = batch.clone();
            rev.reverse();
            let a = m.loss(&batch, 0.01).unwrap();
            let b = m.loss(&rev, 0.01).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn regularizer_never_decreases_loss(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = EcnModel::init(&LAYER_DIMS, seed).unwrap();
            let batch = random_batch(&mut rng, 5);
            prop_assert!(m.loss(&batch, 0.01).unwrap() > m.loss(&batch, 0.0).unwrap());
            let z = EcnModel::zeros(&LAYER_DIMS).unwrap();
            prop_assert_eq!(z.loss(&batch, 0.01).unwrap(), z.loss(&batch, 0.0).unwrap());
        }
    }
}
