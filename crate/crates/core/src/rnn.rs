//! Recurrent network: one GRU layer, a fully connected layer and an output
//! head, trained by backpropagation through time.
//!
//! The recurrent layer iterates, for input `x` and previous state `h`,
//!
//! ```text
//! r     = sigm(W_r x + U_r h)
//! z     = sigm(W_z x + U_z h)
//! h_new = tanh(W x + U (r ∘ h))
//! h'    = z ∘ h + (1 - z) ∘ h_new
//! ```
//!
//! The gates carry no bias terms. Networks consume windows that are already
//! normalized; [`predict_next`] handles normalization for raw intervals.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureMatrix, Normalizer};
use crate::synth::derive_seed;

pub const DEFAULT_HIDDEN: usize = 100;
pub const DEFAULT_WINDOW: usize = 20;

const FORMAT_NAME: &str = "trafficcast-gru";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RnnError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("training diverged at epoch {epoch} (learning rate {learning_rate}): loss is {loss}")]
    Divergence { epoch: usize, learning_rate: f64, loss: f64 },
    #[error("model file: {0}")]
    Format(String),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, RnnError> {
        if data.len() != rows * cols {
            return Err(RnnError::Dimension(format!(
                "{} values for a {rows}×{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `out += self · x`
    fn mul_vec_add(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += selfᵀ · v`
    fn mul_t_vec_add(&self, v: &[f64], out: &mut [f64]) {
        for (vi, row) in v.iter().zip(self.data.chunks_exact(self.cols)) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += vi * a;
            }
        }
    }

    /// `self += a ⊗ b`
    fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        for (ai, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if *ai != 0.0 {
                for (r, bj) in row.iter_mut().zip(b) {
                    *r += ai * bj;
                }
            }
        }
    }
}

/// Dot product over four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn sigm(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Recurrent cell weights. `W*` map input to hidden (`hidden × input`), `U*`
/// map hidden to hidden.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_r: Matrix,
    pub w_z: Matrix,
    pub w_h: Matrix,
    pub u_r: Matrix,
    pub u_z: Matrix,
    pub u_h: Matrix,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruParams {
            w_r: Matrix::zeros(hidden, input),
            w_z: Matrix::zeros(hidden, input),
            w_h: Matrix::zeros(hidden, input),
            u_r: Matrix::zeros(hidden, hidden),
            u_z: Matrix::zeros(hidden, hidden),
            u_h: Matrix::zeros(hidden, hidden),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_r.cols
    }

    pub fn hidden_size(&self) -> usize {
        self.w_r.rows
    }

    fn check(&self) -> Result<(), RnnError> {
        let (h, i) = (self.hidden_size(), self.input_size());
        let ok = [&self.w_r, &self.w_z, &self.w_h].iter().all(|m| m.rows == h && m.cols == i)
            && [&self.u_r, &self.u_z, &self.u_h].iter().all(|m| m.rows == h && m.cols == h);
        if ok {
            Ok(())
        } else {
            Err(RnnError::Dimension("inconsistent GRU weight shapes".into()))
        }
    }
}

/// Intermediate values of one cell step, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
struct StepCache {
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
}

fn cell_step(p: &GruParams, x: &[f64], h_prev: &[f64], h_out: &mut [f64]) -> StepCache {
    let hidden = p.hidden_size();
    let mut r = vec![0.0; hidden];
    let mut z = vec![0.0; hidden];
    let mut n = vec![0.0; hidden];
    p.w_r.mul_vec_add(x, &mut r);
    p.u_r.mul_vec_add(h_prev, &mut r);
    p.w_z.mul_vec_add(x, &mut z);
    p.u_z.mul_vec_add(h_prev, &mut z);
    for v in r.iter_mut().chain(z.iter_mut()) {
        *v = sigm(*v);
    }
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    p.w_h.mul_vec_add(x, &mut n);
    p.u_h.mul_vec_add(&rh, &mut n);
    for v in n.iter_mut() {
        *v = v.tanh();
    }
    for j in 0..hidden {
        h_out[j] = z[j] * h_prev[j] + (1.0 - z[j]) * n[j];
    }
    StepCache { r, z, n }
}

/// One GRU step.
pub fn gru_cell_forward(x: &[f64], h_prev: &[f64], params: &GruParams) -> Result<Vec<f64>, RnnError> {
    params.check()?;
    if x.len() != params.input_size() || h_prev.len() != params.hidden_size() {
        return Err(RnnError::Dimension(format!(
            "cell expects input {} and hidden {}, got {} and {}",
            params.input_size(),
            params.hidden_size(),
            x.len(),
            h_prev.len()
        )));
    }
    let mut h = vec![0.0; params.hidden_size()];
    cell_step(params, x, h_prev, &mut h);
    Ok(h)
}

/// Fully connected output layer, `weight · h + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    /// Identity output, one value.
    Regression,
    /// Class probabilities.
    Softmax { classes: usize },
    /// Probability of the positive class.
    SigmoidBinary,
}

impl Head {
    pub fn output_size(self) -> usize {
        match self {
            Head::Regression | Head::SigmoidBinary => 1,
            Head::Softmax { classes } => classes,
        }
    }

    fn activate(self, logits: &[f64]) -> Vec<f64> {
        match self {
            Head::Regression => logits.to_vec(),
            Head::SigmoidBinary => logits.iter().map(|l| sigm(*l)).collect(),
            Head::Softmax { .. } => softmax(logits),
        }
    }
}

/// Squared error for regression and binary heads; cross-entropy for softmax.
pub fn loss(output: &[f64], target: &[f64], head: Head) -> Result<f64, RnnError> {
    if output.len() != target.len() || output.len() != head.output_size() {
        return Err(RnnError::Dimension(format!(
            "output {} and target {} for a head of size {}",
            output.len(),
            target.len(),
            head.output_size()
        )));
    }
    Ok(match head {
        Head::Regression | Head::SigmoidBinary => output.iter().zip(target).map(|(o, t)| (o - t) * (o - t)).sum(),
        Head::Softmax { .. } => -output
            .iter()
            .zip(target)
            .filter(|(_, t)| **t != 0.0)
            .map(|(p, t)| t * p.max(f64::MIN_POSITIVE).ln())
            .sum::<f64>(),
    })
}

/// Gradient of [`loss`] with respect to the pre-activation logits.
fn loss_grad(output: &[f64], target: &[f64], head: Head) -> Vec<f64> {
    match head {
        Head::Regression => output.iter().zip(target).map(|(o, t)| 2.0 * (o - t)).collect(),
        Head::SigmoidBinary => output
            .iter()
            .zip(target)
            .map(|(o, t)| 2.0 * (o - t) * o * (1.0 - o))
            .collect(),
        Head::Softmax { .. } => {
            let mass: f64 = target.iter().sum();
            output.iter().zip(target).map(|(p, t)| mass * p - t).collect()
        }
    }
}

/// Network parameters, or gradients with the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub cell: GruParams,
    pub fc: Dense,
}

impl Params {
    pub const TENSOR_NAMES: [&'static str; 8] = ["w_r", "w_z", "w_h", "u_r", "u_z", "u_h", "fc_w", "fc_b"];

    fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Params {
            cell: GruParams::zeros(input, hidden),
            fc: Dense {
                weight: Matrix::zeros(output, hidden),
                bias: vec![0.0; output],
            },
        }
    }

    fn zeros_like(&self) -> Self {
        Params::zeros(self.cell.input_size(), self.cell.hidden_size(), self.fc.bias.len())
    }

    /// All tensors in [`Params::TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; 8] {
        let c = &self.cell;
        [
            c.w_r.as_slice(),
            c.w_z.as_slice(),
            c.w_h.as_slice(),
            c.u_r.as_slice(),
            c.u_z.as_slice(),
            c.u_h.as_slice(),
            self.fc.weight.as_slice(),
            &self.fc.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 8] {
        let c = &mut self.cell;
        [
            c.w_r.as_mut_slice(),
            c.w_z.as_mut_slice(),
            c.w_h.as_mut_slice(),
            c.u_r.as_mut_slice(),
            c.u_z.as_mut_slice(),
            c.u_h.as_mut_slice(),
            self.fc.weight.as_mut_slice(),
            &mut self.fc.bias,
        ]
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= k);
        }
    }

    fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    generation: u64,
    inputs: Vec<f64>,
    /// h_0 .. h_m
    hidden: Vec<Vec<f64>>,
    steps: Vec<StepCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub output: Vec<f64>,
    pub logits: Vec<f64>,
    pub cache: ForwardCache,
}

/// GRU layer, fully connected layer and output head.
#[derive(Debug, Clone, PartialEq)]
pub struct GruNetwork {
    pub params: Params,
    pub head: Head,
    pub input_names: Vec<String>,
    /// Number of intervals per input window.
    pub window_length: usize,
    /// Normalizer fitted on the training span, used by [`predict_next`].
    pub normalizer: Option<Normalizer>,
    /// Row of the input window holding the regression target.
    pub target_index: Option<usize>,
    /// Bumped on every parameter update; caches from older generations are stale.
    generation: u64,
}

impl GruNetwork {
    /// Fresh network with weights uniform in `±1/√fan_in` and zero FC bias.
    pub fn new(input_names: Vec<String>, hidden_size: usize, head: Head, window_length: usize, seed: u64) -> Result<Self, RnnError> {
        let input = input_names.len();
        if input == 0 || hidden_size == 0 || window_length == 0 {
            return Err(RnnError::InvalidArgument(
                "input width, hidden size and window length must be positive".into(),
            ));
        }
        if let Head::Softmax { classes } = head {
            if classes < 2 {
                return Err(RnnError::InvalidArgument("softmax head needs at least 2 classes".into()));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bi = 1.0 / (input as f64).sqrt();
        let bh = 1.0 / (hidden_size as f64).sqrt();
        let mut w = |rows, cols, bound| Matrix::uniform(rows, cols, bound, &mut rng);
        let cell = GruParams {
            w_r: w(hidden_size, input, bi),
            w_z: w(hidden_size, input, bi),
            w_h: w(hidden_size, input, bi),
            u_r: w(hidden_size, hidden_size, bh),
            u_z: w(hidden_size, hidden_size, bh),
            u_h: w(hidden_size, hidden_size, bh),
        };
        let fc = Dense {
            weight: w(head.output_size(), hidden_size, bh),
            bias: vec![0.0; head.output_size()],
        };
        Ok(GruNetwork {
            params: Params { cell, fc },
            head,
            input_names,
            window_length,
            normalizer: None,
            target_index: None,
            generation: 0,
        })
    }

    /// Network with every weight and bias zero.
    pub fn zeroed(input_names: Vec<String>, hidden_size: usize, head: Head, window_length: usize) -> Self {
        GruNetwork {
            params: Params::zeros(input_names.len(), hidden_size, head.output_size()),
            head,
            input_names,
            window_length,
            normalizer: None,
            target_index: None,
            generation: 0,
        }
    }

    pub fn input_size(&self) -> usize {
        self.params.cell.input_size()
    }

    pub fn hidden_size(&self) -> usize {
        self.params.cell.hidden_size()
    }

    /// Marks cached activations as stale; call after editing `params` directly.
    pub fn touch(&mut self) {
        self.generation += 1;
    }

    /// Runs the network over `steps` (time-major, `m × input_size` values)
    /// from a zero state.
    pub fn forward_steps(&self, steps: &[f64]) -> Result<Forward, RnnError> {
        let input = self.input_size();
        if steps.is_empty() || steps.len() % input != 0 {
            return Err(RnnError::Dimension(format!(
                "{} input values do not form steps of width {input}",
                steps.len()
            )));
        }
        let hidden = self.hidden_size();
        let m = steps.len() / input;
        let mut hs = Vec::with_capacity(m + 1);
        hs.push(vec![0.0; hidden]);
        let mut caches = Vec::with_capacity(m);
        for x in steps.chunks_exact(input) {
            let mut h = vec![0.0; hidden];
            caches.push(cell_step(&self.params.cell, x, hs.last().expect("h0"), &mut h));
            hs.push(h);
        }
        let fc = &self.params.fc;
        let mut logits = fc.bias.clone();
        fc.weight.mul_vec_add(hs.last().expect("h_m"), &mut logits);
        Ok(Forward {
            output: self.head.activate(&logits),
            logits,
            cache: ForwardCache {
                generation: self.generation,
                inputs: steps.to_vec(),
                hidden: hs,
                steps: caches,
            },
        })
    }

    /// Forward pass over a normalized window (rows = features, columns = time).
    pub fn forward_sequence(&self, window: &FeatureMatrix) -> Result<Forward, RnnError> {
        if window.n_rows() != self.input_size() {
            return Err(RnnError::Dimension(format!(
                "window has {} features, network expects {}",
                window.n_rows(),
                self.input_size()
            )));
        }
        self.forward_steps(window.as_slice())
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<(), RnnError> {
        if cache.generation != self.generation {
            return Err(RnnError::Contract("forward cache predates a parameter update".into()));
        }
        if cache.steps.is_empty()
            || cache.hidden.len() != cache.steps.len() + 1
            || cache.inputs.len() != cache.steps.len() * self.input_size()
            || cache.hidden.iter().any(|h| h.len() != self.hidden_size())
        {
            return Err(RnnError::Contract("forward cache does not match this network".into()));
        }
        Ok(())
    }

    /// Gradients of the loss against `target` for the pass in `fwd`.
    pub fn backward(&self, fwd: &Forward, target: &[f64]) -> Result<Params, RnnError> {
        if target.len() != self.head.output_size() {
            return Err(RnnError::Dimension(format!(
                "target has {} values, head outputs {}",
                target.len(),
                self.head.output_size()
            )));
        }
        self.backward_from_logits(&fwd.cache, &loss_grad(&fwd.output, target, self.head))
    }

    /// Backpropagates a given gradient with respect to the logits.
    pub fn backward_from_logits(&self, cache: &ForwardCache, dlogits: &[f64]) -> Result<Params, RnnError> {
        self.check_cache(cache)?;
        if dlogits.len() != self.head.output_size() {
            return Err(RnnError::Dimension("logit gradient size".into()));
        }
        let p = &self.params;
        let hidden = self.hidden_size();
        let input = self.input_size();
        let mut g = self.params.zeros_like();

        let h_last = cache.hidden.last().expect("checked");
        g.fc.weight.add_outer(dlogits, h_last);
        g.fc.bias.copy_from_slice(dlogits);
        let mut dh = vec![0.0; hidden];
        p.fc.weight.mul_t_vec_add(dlogits, &mut dh);

        let mut da_r = vec![0.0; hidden];
        let mut da_z = vec![0.0; hidden];
        let mut da_n = vec![0.0; hidden];
        let mut rh = vec![0.0; hidden];
        for t in (0..cache.steps.len()).rev() {
            let StepCache { r, z, n } = &cache.steps[t];
            let h_prev = &cache.hidden[t];
            let x = &cache.inputs[t * input..(t + 1) * input];

            let mut dh_prev = vec![0.0; hidden];
            for j in 0..hidden {
                let dn = dh[j] * (1.0 - z[j]);
                da_n[j] = dn * (1.0 - n[j] * n[j]);
                da_z[j] = dh[j] * (h_prev[j] - n[j]) * z[j] * (1.0 - z[j]);
                dh_prev[j] = dh[j] * z[j];
                rh[j] = r[j] * h_prev[j];
            }
            g.cell.w_h.add_outer(&da_n, x);
            g.cell.u_h.add_outer(&da_n, &rh);
            let mut drh = vec![0.0; hidden];
            p.cell.u_h.mul_t_vec_add(&da_n, &mut drh);
            for j in 0..hidden {
                da_r[j] = drh[j] * h_prev[j] * r[j] * (1.0 - r[j]);
                dh_prev[j] += drh[j] * r[j];
            }
            g.cell.w_z.add_outer(&da_z, x);
            g.cell.u_z.add_outer(&da_z, h_prev);
            p.cell.u_z.mul_t_vec_add(&da_z, &mut dh_prev);
            g.cell.w_r.add_outer(&da_r, x);
            g.cell.u_r.add_outer(&da_r, h_prev);
            p.cell.u_r.mul_t_vec_add(&da_r, &mut dh_prev);
            dh = dh_prev;
        }
        Ok(g)
    }

    /// Predicted class (lowest index wins ties) and probabilities.
    pub fn classify_steps(&self, steps: &[f64]) -> Result<(usize, Vec<f64>), RnnError> {
        let fwd = self.forward_steps(steps)?;
        Ok((argmax(&fwd.output), fwd.output))
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One training example: a normalized window flattened time-major and its target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub steps: Vec<f64>,
    pub target: Vec<f64>,
}

impl Sample {
    pub fn from_window(window: &FeatureMatrix, target: Vec<f64>) -> Self {
        Sample {
            steps: window.as_slice().to_vec(),
            target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub window_length: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub gradient_clip_norm: f64,
    /// When set, each epoch visits a fresh random subset of this many samples.
    pub max_samples_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window_length: DEFAULT_WINDOW,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            gradient_clip_norm: 5.0,
            max_samples_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RnnError> {
        if self.window_length == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(RnnError::InvalidArgument(
                "window length, epochs and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(RnnError::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.gradient_clip_norm > 0.0) {
            return Err(RnnError::InvalidArgument("gradient clip norm must be positive".into()));
        }
        Ok(())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    m: Params,
    v: Params,
    step: i32,
}

impl Adam {
    fn new(like: &Params) -> Self {
        Adam {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut Params, grad: &Params, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grad.tensors());
        for (((p, m), v), g) in tensors {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample loss of each epoch, measured before each batch's update.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch training with adaptive moments and global gradient-norm
/// clipping. Deterministic for a fixed `config.seed`.
pub fn train(net: &mut GruNetwork, dataset: &[Sample], config: &TrainConfig) -> Result<TrainReport, RnnError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(RnnError::InvalidArgument("empty training set".into()));
    }
    let width = dataset[0].steps.len();
    let out = net.head.output_size();
    if let Some(bad) = dataset.iter().position(|s| s.steps.len() != width || s.target.len() != out) {
        return Err(RnnError::Dimension(format!("sample {bad} differs in shape from sample 0")));
    }
    if width % net.input_size() != 0 {
        return Err(RnnError::Dimension(format!(
            "window of {width} values does not match input width {}",
            net.input_size()
        )));
    }

    let mut adam = Adam::new(&net.params);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch as u64));
        order.shuffle(&mut rng);
        let take = config.max_samples_per_epoch.unwrap_or(order.len()).min(order.len()).max(1);
        let mut losses: Vec<(usize, f64)> = Vec::with_capacity(take);
        for batch in order[..take].chunks(config.batch_size) {
            let mut grad = net.params.zeros_like();
            for &i in batch {
                let s = &dataset[i];
                let fwd = net.forward_steps(&s.steps)?;
                let l = loss(&fwd.output, &s.target, net.head)?;
                if !l.is_finite() {
                    return Err(RnnError::Divergence {
                        epoch,
                        learning_rate: config.learning_rate,
                        loss: l,
                    });
                }
                losses.push((i, l));
                grad.add_assign(&net.backward(&fwd, &s.target)?);
            }
            grad.scale(1.0 / batch.len() as f64);
            let norm = grad.norm();
            if !norm.is_finite() {
                return Err(RnnError::Divergence {
                    epoch,
                    learning_rate: config.learning_rate,
                    loss: norm,
                });
            }
            if norm > config.gradient_clip_norm {
                grad.scale(config.gradient_clip_norm / norm);
            }
            adam.update(&mut net.params, &grad, config.learning_rate);
            net.touch();
        }
        // sum in sample order so the value does not depend on the shuffle
        losses.sort_by_key(|(i, _)| *i);
        let mean = losses.iter().map(|(_, l)| l).sum::<f64>() / losses.len() as f64;
        if !mean.is_finite() || !net.params.is_finite() {
            return Err(RnnError::Divergence {
                epoch,
                learning_rate: config.learning_rate,
                loss: mean,
            });
        }
        epoch_losses.push(mean);
    }
    Ok(TrainReport { epoch_losses })
}

/// Iterated n-step prediction of the target feature from raw (unnormalized)
/// recent intervals. Each prediction is floored at zero, written into the
/// target row of the next column, and the other features keep their last
/// observed values.
pub fn predict_next(net: &GruNetwork, recent: &FeatureMatrix, n: usize) -> Result<Vec<f64>, RnnError> {
    let norm = net
        .normalizer
        .as_ref()
        .ok_or_else(|| RnnError::Contract("network has no normalizer".into()))?;
    let target = net
        .target_index
        .ok_or_else(|| RnnError::Contract("network has no regression target".into()))?;
    if net.head != Head::Regression {
        return Err(RnnError::Contract("n-step prediction needs a regression head".into()));
    }
    let m = net.window_length;
    if recent.n_cols() < m {
        return Err(RnnError::InvalidArgument(format!(
            "need {m} recent intervals, got {}",
            recent.n_cols()
        )));
    }
    if recent.n_rows() != net.input_size() {
        return Err(RnnError::Dimension(format!(
            "recent intervals have {} features, network expects {}",
            recent.n_rows(),
            net.input_size()
        )));
    }
    let mut window = recent.window(recent.n_cols() - m..recent.n_cols());
    for t in 0..m {
        norm.transform_column(window.column_mut(t));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let y = net.forward_sequence(&window)?.output[0];
        let raw = norm.inverse_value(target, y).max(0.0);
        out.push(raw);
        let mut next = window.column(m - 1).to_vec();
        next[target] = norm.transform_value(target, raw);
        window.roll(&next);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct Weights {
    w_r: Vec<f64>,
    w_z: Vec<f64>,
    w_h: Vec<f64>,
    u_r: Vec<f64>,
    u_z: Vec<f64>,
    u_h: Vec<f64>,
    fc_w: Vec<f64>,
    fc_b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    format: String,
    version: u32,
    input_size: usize,
    hidden_size: usize,
    output_size: usize,
    window_length: usize,
    head: Head,
    input_names: Vec<String>,
    target_index: Option<usize>,
    normalizer: Option<Normalizer>,
    weights: Weights,
}

impl GruNetwork {
    pub fn to_json(&self) -> String {
        let t = self.params.tensors();
        let file = NetworkFile {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            input_size: self.input_size(),
            hidden_size: self.hidden_size(),
            output_size: self.head.output_size(),
            window_length: self.window_length,
            head: self.head,
            input_names: self.input_names.clone(),
            target_index: self.target_index,
            normalizer: self.normalizer.clone(),
            weights: Weights {
                w_r: t[0].to_vec(),
                w_z: t[1].to_vec(),
                w_h: t[2].to_vec(),
                u_r: t[3].to_vec(),
                u_z: t[4].to_vec(),
                u_h: t[5].to_vec(),
                fc_w: t[6].to_vec(),
                fc_b: t[7].to_vec(),
            },
        };
        serde_json::to_string_pretty(&file).expect("network serializes")
    }

    pub fn from_json(source: &str) -> Result<Self, RnnError> {
        let f: NetworkFile = serde_json::from_str(source).map_err(|e| RnnError::Format(e.to_string()))?;
        if f.format != FORMAT_NAME || f.version != FORMAT_VERSION {
            return Err(RnnError::Format(format!(
                "unsupported format {:?} version {}",
                f.format, f.version
            )));
        }
        let (i, h, o) = (f.input_size, f.hidden_size, f.output_size);
        if o != f.head.output_size() || f.input_names.len() != i || h == 0 || i == 0 {
            return Err(RnnError::Format("declared shapes are inconsistent".into()));
        }
        if f.target_index.is_some_and(|t| t >= i) {
            return Err(RnnError::Format("target index out of range".into()));
        }
        if f.normalizer.as_ref().is_some_and(|n| n.width() != i || n.scale.len() != i) {
            return Err(RnnError::Format("normalizer width does not match input size".into()));
        }
        let mat = |name: &str, rows, cols, data: Vec<f64>| {
            Matrix::from_vec(rows, cols, data).map_err(|e| RnnError::Format(format!("{name}: {e}")))
        };
        let w = f.weights;
        if w.fc_b.len() != o {
            return Err(RnnError::Format(format!("fc_b: {} values for {o} outputs", w.fc_b.len())));
        }
        let params = Params {
            cell: GruParams {
                w_r: mat("w_r", h, i, w.w_r)?,
                w_z: mat("w_z", h, i, w.w_z)?,
                w_h: mat("w_h", h, i, w.w_h)?,
                u_r: mat("u_r", h, h, w.u_r)?,
                u_z: mat("u_z", h, h, w.u_z)?,
                u_h: mat("u_h", h, h, w.u_h)?,
            },
            fc: Dense {
                weight: mat("fc_w", o, h, w.fc_w)?,
                bias: w.fc_b,
            },
        };
        if !params.is_finite() {
            return Err(RnnError::Format("non-finite weights".into()));
        }
        Ok(GruNetwork {
            params,
            head: f.head,
            input_names: f.input_names,
            window_length: f.window_length.max(1),
            normalizer: f.normalizer,
            target_index: f.target_index,
            generation: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    fn random_steps(m: usize, width: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m * width).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    /// Scalar reference for one cell step, written index by index.
    fn cell_oracle(x: &[f64], h: &[f64], p: &GruParams) -> Vec<f64> {
        let hs = h.len();
        let dot = |m: &Matrix, v: &[f64], j: usize| {
            let mut s = 0.0;
            for k in 0..v.len() {
                s += m.get(j, k) * v[k];
            }
            s
        };
        let mut r = vec![0.0; hs];
        let mut z = vec![0.0; hs];
        for j in 0..hs {
            r[j] = 1.0 / (1.0 + (-(dot(&p.w_r, x, j) + dot(&p.u_r, h, j))).exp());
            z[j] = 1.0 / (1.0 + (-(dot(&p.w_z, x, j) + dot(&p.u_z, h, j))).exp());
        }
        let mut rh = vec![0.0; hs];
        for j in 0..hs {
            rh[j] = r[j] * h[j];
        }
        let mut out = vec![0.0; hs];
        for j in 0..hs {
            let cand = (dot(&p.w_h, x, j) + dot(&p.u_h, &rh, j)).tanh();
            out[j] = z[j] * h[j] + (1.0 - z[j]) * cand;
        }
        out
    }

    #[test]
    fn zero_params_halve_the_state() {
        let p = GruParams::zeros(2, 3);
        let v = [0.4, -1.0, 2.0];
        let h = gru_cell_forward(&[5.0, -3.0], &v, &p).unwrap();
        assert_eq!(h, vec![0.2, -0.5, 1.0]);
        assert_eq!(gru_cell_forward(&[5.0, -3.0], &[0.0; 3], &p).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn cell_matches_scalar_oracle() {
        for seed in 0..5 {
            let net = GruNetwork::new(names(2), 3, Head::Regression, 1, seed).unwrap();
            let x = random_steps(1, 2, seed + 100);
            let h = random_steps(1, 3, seed + 200);
            let fast = gru_cell_forward(&x, &h, &net.params.cell).unwrap();
            let slow = cell_oracle(&x, &h, &net.params.cell);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cell_rejects_bad_dimensions() {
        let p = GruParams::zeros(2, 3);
        assert!(matches!(gru_cell_forward(&[1.0], &[0.0; 3], &p), Err(RnnError::Dimension(_))));
        assert!(matches!(gru_cell_forward(&[1.0, 2.0], &[0.0; 2], &p), Err(RnnError::Dimension(_))));
    }

    #[test]
    fn zero_network_outputs() {
        let net = GruNetwork::zeroed(names(2), 4, Head::Regression, 3);
        let f = net.forward_steps(&random_steps(3, 2, 1)).unwrap();
        assert_eq!(f.output, vec![0.0]);
        let cls = GruNetwork::zeroed(names(2), 4, Head::Softmax { classes: 4 }, 3);
        let f = cls.forward_steps(&random_steps(3, 2, 1)).unwrap();
        assert_eq!(f.output, vec![0.25; 4]);
        assert_eq!(cls.classify_steps(&random_steps(3, 2, 2)).unwrap().0, 0);
    }

    #[test]
    fn single_step_window_is_cell_plus_head() {
        for head in [Head::Regression, Head::SigmoidBinary, Head::Softmax { classes: 3 }] {
            let net = GruNetwork::new(names(2), 5, head, 1, 9).unwrap();
            let x = random_steps(1, 2, 4);
            let h = gru_cell_forward(&x, &[0.0; 5], &net.params.cell).unwrap();
            let mut logits = net.params.fc.bias.clone();
            for (o, l) in logits.iter_mut().enumerate() {
                for j in 0..5 {
                    *l += net.params.fc.weight.get(o, j) * h[j];
                }
            }
            let expected = head.activate(&logits);
            let got = net.forward_steps(&x).unwrap().output;
            for (a, b) in got.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn window_width_checked() {
        let net = GruNetwork::new(names(2), 4, Head::Regression, 2, 1).unwrap();
        let w = FeatureMatrix::from_rows(names(3), 1.0, &[vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]]).unwrap();
        assert!(matches!(net.forward_sequence(&w), Err(RnnError::Dimension(_))));
        assert!(net.forward_steps(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss(&[1.5], &[1.5], Head::Regression).unwrap(), 0.0);
        assert_eq!(loss(&[3.0], &[1.0], Head::Regression).unwrap(), 4.0);
        let ce = loss(&[0.25; 4], &[0.0, 1.0, 0.0, 0.0], Head::Softmax { classes: 4 }).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-12);
        assert!(loss(&[1.0, 2.0], &[1.0], Head::Regression).is_err());
    }

    /// Loss of the network as a pure function of its parameters.
    fn net_loss(net: &GruNetwork, steps: &[f64], target: &[f64]) -> f64 {
        let f = net.forward_steps(steps).unwrap();
        loss(&f.output, target, net.head).unwrap()
    }

    fn finite_difference_check(head: Head, target: Vec<f64>, seed: u64) {
        let hidden = 4;
        let m = 5;
        let input = 3;
        let net = GruNetwork::new(names(input), hidden, head, m, seed).unwrap();
        let steps = random_steps(m, input, seed + 1);
        let fwd = net.forward_steps(&steps).unwrap();
        let grads = net.backward(&fwd, &target).unwrap();
        let step = 1e-5;
        for (ti, name) in Params::TENSOR_NAMES.iter().enumerate() {
            let analytic = grads.tensors()[ti].to_vec();
            let mut numeric = vec![0.0; analytic.len()];
            for k in 0..analytic.len() {
                let mut plus = net.clone();
                plus.params.tensors_mut()[ti][k] += step;
                let mut minus = net.clone();
                minus.params.tensors_mut()[ti][k] -= step;
                numeric[k] = (net_loss(&plus, &steps, &target) - net_loss(&minus, &steps, &target)) / (2.0 * step);
            }
            let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt()
                + numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
            let rel = if scale > 0.0 { diff / scale } else { 0.0 };
            assert!(rel < 1e-4, "{head:?} {name}: relative error {rel}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        finite_difference_check(Head::Regression, vec![0.7], 21);
        finite_difference_check(Head::SigmoidBinary, vec![1.0], 22);
        finite_difference_check(Head::Softmax { classes: 3 }, vec![0.0, 0.0, 1.0], 23);
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let net = GruNetwork::new(names(2), 4, Head::Regression, 3, 5).unwrap();
        let steps = random_steps(3, 2, 6);
        let fwd = net.forward_steps(&steps).unwrap();
        let g = net.backward(&fwd, &fwd.output.clone()).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn gradients_are_linear_in_the_loss() {
        let net = GruNetwork::new(names(2), 4, Head::Regression, 3, 5).unwrap();
        let fwd = net.forward_steps(&random_steps(3, 2, 6)).unwrap();
        let g1 = net.backward_from_logits(&fwd.cache, &[0.3]).unwrap();
        let g2 = net.backward_from_logits(&fwd.cache, &[0.6]).unwrap();
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((2.0 * x - y).abs() <= 1e-15 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let mut net = GruNetwork::new(names(2), 4, Head::Regression, 3, 5).unwrap();
        let fwd = net.forward_steps(&random_steps(3, 2, 6)).unwrap();
        net.touch();
        assert!(matches!(net.backward(&fwd, &[0.0]), Err(RnnError::Contract(_))));
        let other = GruNetwork::new(names(2), 5, Head::Regression, 3, 5).unwrap();
        let fwd_other = other.forward_steps(&random_steps(3, 2, 6)).unwrap();
        let fresh = GruNetwork::new(names(2), 4, Head::Regression, 3, 5).unwrap();
        assert!(matches!(fresh.backward(&fwd_other, &[0.0]), Err(RnnError::Contract(_))));
    }

    #[test]
    fn memorizes_a_single_pair() {
        let mut net = GruNetwork::new(names(2), 8, Head::Regression, 4, 3).unwrap();
        let data = vec![Sample { steps: random_steps(4, 2, 7), target: vec![0.8] }];
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 500,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let report = train(&mut net, &data, &cfg).unwrap();
        assert_eq!(report.epoch_losses.len(), 500);
        let final_loss = net_loss(&net, &data[0].steps, &data[0].target);
        assert!(final_loss < 1e-3, "{final_loss}");
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut net = GruNetwork::new(names(2), 6, Head::Regression, 3, 3).unwrap();
        let before = net.params.clone();
        let data: Vec<Sample> = (0..10)
            .map(|i| Sample { steps: random_steps(3, 2, i), target: vec![i as f64 * 0.1] })
            .collect();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 4, batch_size: 3, ..TrainConfig::default() };
        let report = train(&mut net, &data, &cfg).unwrap();
        assert_eq!(net.params, before);
        assert!(report.epoch_losses.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn training_is_reproducible() {
        let data: Vec<Sample> = (0..20)
            .map(|i| Sample { steps: random_steps(3, 2, i), target: vec![(i % 3) as f64] })
            .collect();
        let cfg = TrainConfig { learning_rate: 0.01, epochs: 3, batch_size: 4, seed: 9, ..TrainConfig::default() };
        let run = || {
            let mut net = GruNetwork::new(names(2), 6, Head::Regression, 3, 3).unwrap();
            let r = train(&mut net, &data, &cfg).unwrap();
            (net.params, r.epoch_losses)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn divergence_is_reported() {
        let mut net = GruNetwork::new(names(1), 4, Head::Regression, 2, 3).unwrap();
        let data = vec![Sample { steps: vec![0.5, 0.5], target: vec![f64::INFINITY] }];
        let err = train(&mut net, &data, &TrainConfig { epochs: 2, ..TrainConfig::default() }).unwrap_err();
        assert!(matches!(err, RnnError::Divergence { epoch: 0, .. }), "{err}");
    }

    #[test]
    fn train_rejects_bad_input() {
        let mut net = GruNetwork::new(names(2), 4, Head::Regression, 2, 3).unwrap();
        assert!(train(&mut net, &[], &TrainConfig::default()).is_err());
        let ragged = vec![
            Sample { steps: vec![0.0; 4], target: vec![0.0] },
            Sample { steps: vec![0.0; 6], target: vec![0.0] },
        ];
        assert!(train(&mut net, &ragged, &TrainConfig::default()).is_err());
        let bad_cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(train(&mut net, &ragged[..1], &bad_cfg).is_err());
    }

    fn regression_net_with_bias(bias: f64) -> GruNetwork {
        let mut net = GruNetwork::zeroed(names(2), 3, Head::Regression, 3);
        net.params.fc.bias[0] = bias;
        net.target_index = Some(0);
        net.normalizer = Some(Normalizer { shift: vec![10.0, 0.0], scale: vec![2.0, 1.0] });
        net
    }

    fn recent_intervals() -> FeatureMatrix {
        FeatureMatrix::from_rows(
            vec!["ul_count".into(), "dl_count".into()],
            10.0,
            &[vec![3.0, 9.0, 12.0, 14.0], vec![1.0, 2.0, 3.0, 4.0]],
        )
        .unwrap()
    }

    #[test]
    fn constant_network_predicts_constant() {
        // output 1.5 in normalized units is 10 + 2·1.5 = 13 packets
        let net = regression_net_with_bias(1.5);
        assert_eq!(predict_next(&net, &recent_intervals(), 4).unwrap(), vec![13.0; 4]);
        // negative predictions floor at zero
        let net = regression_net_with_bias(-20.0);
        assert_eq!(predict_next(&net, &recent_intervals(), 2).unwrap(), vec![0.0; 2]);
    }

    #[test]
    fn one_step_prediction_is_denormalized_forward() {
        let mut net = GruNetwork::new(vec!["ul_count".into(), "dl_count".into()], 5, Head::Regression, 3, 4).unwrap();
        net.target_index = Some(0);
        let recent = recent_intervals();
        let norm = Normalizer::fit(&recent, 0..4).unwrap();
        net.normalizer = Some(norm.clone());
        let window = norm.transform(&recent.window(1..4)).unwrap();
        let y = net.forward_sequence(&window).unwrap().output[0];
        let expected = norm.inverse_value(0, y).max(0.0);
        assert_eq!(predict_next(&net, &recent, 1).unwrap(), vec![expected]);
    }

    #[test]
    fn prediction_needs_history_and_target() {
        let net = regression_net_with_bias(0.0);
        let short = recent_intervals().window(0..2);
        assert!(matches!(predict_next(&net, &short, 1), Err(RnnError::InvalidArgument(_))));
        let mut no_target = regression_net_with_bias(0.0);
        no_target.target_index = None;
        assert!(matches!(predict_next(&no_target, &recent_intervals(), 1), Err(RnnError::Contract(_))));
    }

    #[test]
    fn json_round_trip_and_shape_checks() {
        let mut net = GruNetwork::new(names(2), 4, Head::Softmax { classes: 3 }, 5, 8).unwrap();
        net.normalizer = Some(Normalizer { shift: vec![1.0, 2.0], scale: vec![3.0, 4.0] });
        let json = net.to_json();
        let back = GruNetwork::from_json(&json).unwrap();
        assert_eq!(back, net);

        let mut doc: serde_json::Value = serde_json::from_str(&json).unwrap();
        doc["weights"]["u_z"].as_array_mut().unwrap().pop();
        assert!(matches!(GruNetwork::from_json(&doc.to_string()), Err(RnnError::Format(_))));
        let mut doc: serde_json::Value = serde_json::from_str(&json).unwrap();
        doc["hidden_size"] = serde_json::json!(5);
        assert!(GruNetwork::from_json(&doc.to_string()).is_err());
        let mut doc: serde_json::Value = serde_json::from_str(&json).unwrap();
        doc["version"] = serde_json::json!(99);
        assert!(GruNetwork::from_json(&doc.to_string()).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.1, 0.7, 0.1, 0.1]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            logits in prop::collection::vec(-50.0f64..50.0, 2..8),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&logits);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let q = softmax(&shifted);
            prop_assert_eq!(argmax(&p), argmax(&q));
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn hidden_state_stays_bounded(seed in 0u64..1000, m in 1usize..40) {
            let net = GruNetwork::new(names(2), 6, Head::Regression, m, seed).unwrap();
            let steps: Vec<f64> = random_steps(m, 2, seed).into_iter().map(|v| v * 50.0).collect();
            let f = net.forward_steps(&steps).unwrap();
            for h in &f.cache.hidden {
                prop_assert!(h.iter().all(|v| v.abs() <= 1.0));
            }
        }
    }
}
