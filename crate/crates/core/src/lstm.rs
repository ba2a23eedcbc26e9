//! Single-layer LSTM with a linear softmax head, trained by full
//! backpropagation through time.
//!
//! Per step, with `a_g = W_g x_t + U_g h_{t-1} + b_g`:
//!
//! ```text
//! f = sigmoid(a_f)   i = sigmoid(a_i)   o = sigmoid(a_o)   g = tanh(a_c)
//! c_t = f * c_{t-1} + i * g
//! h_t = o * tanh(c_t)
//! logits_t = V h_t + v
//! ```
//!
//! All parameters live in one flat vector so the optimizer and the
//! gradient checks can treat them uniformly. Layout, with `H` hidden units
//! and `D` inputs, gates ordered forget, input, output, cell:
//!
//! | block            | shape      |
//! |------------------|------------|
//! | `W_f W_i W_o W_c` | 4 x (H, D) |
//! | `U_f U_i U_o U_c` | 4 x (H, H) |
//! | `b_f b_i b_o b_c` | 4 x H      |
//! | head weights `V` | (K, H)     |
//! | head bias `v`    | K          |
//!
//! Every matrix is row-major.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::OnlineClassifier;
use crate::error::{Error, Result};
use crate::optim::{softmax, softmax_cross_entropy, Adam, AdamConfig, TrainingLog};
use crate::sensor::{
    standardize_features, FeatureSet, FeatureVector, PollutantLabel, Scaler, NUM_CLASSES,
    NUM_FEATURES,
};

pub const DEFAULT_HIDDEN: usize = 50;
const GATES: usize = 4;
const FORGET: usize = 0;
const INPUT: usize = 1;
const OUTPUT: usize = 2;
const CELL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub hidden: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            iterations: 1000,
            learning_rate: 0.001,
            seed: 0,
        }
    }
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub hidden: usize,
}

impl Layout {
    pub fn input_weights(&self, gate: usize) -> usize {
        gate * self.hidden * NUM_FEATURES
    }

    pub fn recurrent_weights(&self, gate: usize) -> usize {
        GATES * self.hidden * NUM_FEATURES + gate * self.hidden * self.hidden
    }

    pub fn bias(&self, gate: usize) -> usize {
        GATES * self.hidden * (NUM_FEATURES + self.hidden) + gate * self.hidden
    }

    pub fn head_weights(&self) -> usize {
        GATES * self.hidden * (NUM_FEATURES + self.hidden + 1)
    }

    pub fn head_bias(&self) -> usize {
        self.head_weights() + NUM_CLASSES * self.hidden
    }

    pub fn len(&self) -> usize {
        self.head_bias() + NUM_CLASSES
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    hidden: usize,
    params: Vec<f64>,
    pub scaler: Scaler,
    pub seed: u64,
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub x: [f64; NUM_FEATURES],
    /// Gate activations `f, i, o` and cell candidate `g`, each `H` long.
    pub gates: [Vec<f64>; GATES],
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

/// Forward activations of a whole sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmTape {
    pub steps: Vec<StepCache>,
}

impl LstmTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl LstmModel {
    pub fn zeros(hidden: usize, scaler: Scaler) -> Self {
        Self {
            hidden,
            params: vec![0.0; Layout { hidden }.len()],
            scaler,
            seed: 0,
        }
    }

    /// Weights drawn from `U(-k, k)` with `k = 1/sqrt(hidden)`, biases zero.
    pub fn init(hidden: usize, scaler: Scaler, seed: u64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Argument("hidden size must be >= 1".into()));
        }
        let layout = Layout { hidden };
        let k = 1.0 / (hidden as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.len()];
        let mut fill = |range: std::ops::Range<usize>| {
            for p in &mut params[range] {
                *p = rng.random_range(-k..k);
            }
        };
        fill(0..layout.bias(0));
        fill(layout.head_weights()..layout.head_bias());
        Ok(Self {
            hidden,
            params,
            scaler,
            seed,
        })
    }

    pub fn from_params(hidden: usize, params: Vec<f64>, scaler: Scaler, seed: u64) -> Result<Self> {
        let expected = Layout { hidden }.len();
        if hidden == 0 || params.len() != expected {
            return Err(Error::Format(format!(
                "hidden size {hidden} needs {expected} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("LSTM parameters must be finite".into()));
        }
        Ok(Self {
            hidden,
            params,
            scaler,
            seed,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn layout(&self) -> Layout {
        Layout {
            hidden: self.hidden,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// One cell update on standardized input.
    pub fn cell_step(&self, x: &[f64; NUM_FEATURES], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
        let hs = self.hidden;
        let lay = self.layout();
        let p = &self.params;
        let mut gates: [Vec<f64>; GATES] = std::array::from_fn(|_| vec![0.0; hs]);
        for (g, out) in gates.iter_mut().enumerate() {
            let w = &p[lay.input_weights(g)..lay.input_weights(g) + hs * NUM_FEATURES];
            let u = &p[lay.recurrent_weights(g)..lay.recurrent_weights(g) + hs * hs];
            let b = &p[lay.bias(g)..lay.bias(g) + hs];
            for r in 0..hs {
                let a = b[r]
                    + dot(&w[r * NUM_FEATURES..(r + 1) * NUM_FEATURES], x)
                    + dot(&u[r * hs..(r + 1) * hs], h_prev);
                out[r] = if g == CELL { a.tanh() } else { sigmoid(a) };
            }
        }
        let mut c = vec![0.0; hs];
        let mut tanh_c = vec![0.0; hs];
        let mut h = vec![0.0; hs];
        for r in 0..hs {
            c[r] = gates[FORGET][r] * c_prev[r] + gates[INPUT][r] * gates[CELL][r];
            tanh_c[r] = c[r].tanh();
            h[r] = gates[OUTPUT][r] * tanh_c[r];
        }
        StepCache {
            x: *x,
            gates,
            c,
            tanh_c,
            h,
        }
    }

    pub fn head(&self, h: &[f64]) -> [f64; NUM_CLASSES] {
        let lay = self.layout();
        let w = &self.params[lay.head_weights()..lay.head_bias()];
        let b = &self.params[lay.head_bias()..];
        std::array::from_fn(|k| b[k] + dot(&w[k * self.hidden..(k + 1) * self.hidden], h))
    }

    /// Forward pass over standardized input from `h_0 = c_0 = 0`.
    pub fn forward_scaled(&self, xs: &[FeatureVector]) -> (Vec<[f64; NUM_CLASSES]>, LstmTape) {
        let zeros = vec![0.0; self.hidden];
        let mut steps: Vec<StepCache> = Vec::with_capacity(xs.len());
        let mut logits = Vec::with_capacity(xs.len());
        for x in xs {
            let step = match steps.last() {
                None => self.cell_step(&x.0, &zeros, &zeros),
                Some(prev) => self.cell_step(&x.0, &prev.h, &prev.c),
            };
            logits.push(self.head(&step.h));
            steps.push(step);
        }
        (logits, LstmTape { steps })
    }

    /// Gradients of `sum_t dlogits[t] . logits_t` with respect to every
    /// parameter, in flat layout.
    pub fn backward(&self, tape: &LstmTape, dlogits: &[[f64; NUM_CLASSES]]) -> Result<Vec<f64>> {
        if tape.len() != dlogits.len() {
            return Err(Error::Argument(format!(
                "tape has {} steps but {} logit gradients were given",
                tape.len(),
                dlogits.len()
            )));
        }
        let hs = self.hidden;
        let lay = self.layout();
        let p = &self.params;
        let mut grad = vec![0.0; lay.len()];
        let zeros = vec![0.0; hs];

        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        let mut da: [Vec<f64>; GATES] = std::array::from_fn(|_| vec![0.0; hs]);
        let head_w = lay.head_weights();

        for t in (0..tape.len()).rev() {
            let step = &tape.steps[t];
            let (h_prev, c_prev) = if t == 0 {
                (&zeros, &zeros)
            } else {
                (&tape.steps[t - 1].h, &tape.steps[t - 1].c)
            };

            // head
            let mut dh = dh_next.clone();
            for k in 0..NUM_CLASSES {
                let dl = dlogits[t][k];
                axpy(dl, &step.h, &mut grad[head_w + k * hs..head_w + (k + 1) * hs]);
                grad[lay.head_bias() + k] += dl;
                axpy(dl, &p[head_w + k * hs..head_w + (k + 1) * hs], &mut dh);
            }

            let [f, i, o, g] = &step.gates;
            for r in 0..hs {
                let d_o = dh[r] * step.tanh_c[r];
                let dc = dh[r] * o[r] * (1.0 - step.tanh_c[r] * step.tanh_c[r]) + dc_next[r];
                let d_f = dc * c_prev[r];
                let d_i = dc * g[r];
                let d_g = dc * i[r];
                dc_next[r] = dc * f[r];
                da[FORGET][r] = d_f * f[r] * (1.0 - f[r]);
                da[INPUT][r] = d_i * i[r] * (1.0 - i[r]);
                da[OUTPUT][r] = d_o * o[r] * (1.0 - o[r]);
                da[CELL][r] = d_g * (1.0 - g[r] * g[r]);
            }

            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for gate in 0..GATES {
                let w_off = lay.input_weights(gate);
                let u_off = lay.recurrent_weights(gate);
                let b_off = lay.bias(gate);
                for r in 0..hs {
                    let d = da[gate][r];
                    if d == 0.0 {
                        continue;
                    }
                    axpy(
                        d,
                        &step.x,
                        &mut grad[w_off + r * NUM_FEATURES..w_off + (r + 1) * NUM_FEATURES],
                    );
                    axpy(d, h_prev, &mut grad[u_off + r * hs..u_off + (r + 1) * hs]);
                    grad[b_off + r] += d;
                    axpy(d, &p[u_off + r * hs..u_off + (r + 1) * hs], &mut dh_next);
                }
            }
        }
        Ok(grad)
    }

    /// Summed cross-entropy over one standardized sequence, scaled by
    /// `weight`, with its parameter gradient.
    pub fn sequence_loss_and_gradient(
        &self,
        xs: &[FeatureVector],
        labels: &[PollutantLabel],
        weight: f64,
    ) -> Result<(f64, Vec<f64>)> {
        if xs.len() != labels.len() {
            return Err(Error::Argument(format!(
                "{} inputs but {} labels",
                xs.len(),
                labels.len()
            )));
        }
        let (logits, tape) = self.forward_scaled(xs);
        let mut loss = 0.0;
        let mut dlogits = Vec::with_capacity(xs.len());
        for (z, y) in logits.iter().zip(labels) {
            let (l, g) = softmax_cross_entropy(z, y.code())?;
            loss += l;
            dlogits.push(std::array::from_fn(|k| g[k] * weight));
        }
        let grad = self.backward(&tape, &dlogits)?;
        Ok((loss * weight, grad))
    }
}

/// Forward pass on raw ratio features.
pub fn lstm_forward(
    model: &LstmModel,
    sequence: &[FeatureVector],
) -> Result<(Vec<[f64; NUM_CLASSES]>, LstmTape)> {
    if sequence.is_empty() {
        return Err(Error::Argument("empty input sequence".into()));
    }
    if sequence.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite feature vector".into()));
    }
    let scaled: Vec<FeatureVector> = sequence.iter().map(|x| model.scaler.transform(x)).collect();
    Ok(model.forward_scaled(&scaled))
}

pub fn lstm_backward(
    model: &LstmModel,
    tape: &LstmTape,
    dlogits: &[[f64; NUM_CLASSES]],
) -> Result<Vec<f64>> {
    model.backward(tape, dlogits)
}

/// Full-batch BPTT with Adam. Each iteration runs every session from a zero
/// state and steps once on the mean per-frame cross-entropy.
pub fn train_lstm(train: &FeatureSet, config: &LstmConfig) -> Result<(LstmModel, TrainingLog)> {
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let (scaler, scaled) = standardize_features(train)?;
    let mut model = LstmModel::init(config.hidden, scaler, config.seed)?;
    let mut adam = Adam::new(
        AdamConfig::with_learning_rate(config.learning_rate),
        model.layout().len(),
    )?;
    let weight = 1.0 / train.len() as f64;
    let mut log = TrainingLog::default();

    let batch = |model: &LstmModel| -> Result<(f64, Vec<f64>)> {
        let mut total = 0.0;
        let mut grad = vec![0.0; model.layout().len()];
        for seq in scaled.sequences.iter().filter(|s| !s.is_empty()) {
            let (l, g) = model.sequence_loss_and_gradient(&seq.features, &seq.labels, weight)?;
            total += l;
            axpy(1.0, &g, &mut grad);
        }
        Ok((total, grad))
    };

    for it in 0..config.iterations {
        let (loss, grad) = batch(&model)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("LSTM loss diverged at iteration {it}")));
        }
        log.losses.push(loss);
        adam.step(&mut model.params, &grad)?;
    }
    let (loss, _) = batch(&model)?;
    log.losses.push(loss);
    Ok((model, log))
}

/// Labels for one session from a zero state.
pub fn predict_sequence(model: &LstmModel, features: &[FeatureVector]) -> Result<Vec<PollutantLabel>> {
    let mut stream = LstmStream::new(model);
    features
        .iter()
        .map(|x| stream.push(x).map(|p| PollutantLabel::argmax(&p)))
        .collect()
}

/// Hidden and cell state of one stream.
#[derive(Debug, Clone)]
pub struct LstmStream<'a> {
    model: &'a LstmModel,
    h: Vec<f64>,
    c: Vec<f64>,
}

impl<'a> LstmStream<'a> {
    pub fn new(model: &'a LstmModel) -> Self {
        Self {
            model,
            h: vec![0.0; model.hidden],
            c: vec![0.0; model.hidden],
        }
    }
}

impl OnlineClassifier for LstmStream<'_> {
    fn reset(&mut self) {
        self.h.iter_mut().for_each(|v| *v = 0.0);
        self.c.iter_mut().for_each(|v| *v = 0.0);
    }

    fn push(&mut self, x: &FeatureVector) -> Result<[f64; NUM_CLASSES]> {
        if !x.is_finite() {
            return Err(Error::Numeric("non-finite feature vector".into()));
        }
        let z = self.model.scaler.transform(x);
        let step = self.model.cell_step(&z.0, &self.h, &self.c);
        let logits = self.model.head(&step.h);
        self.h = step.h;
        self.c = step.c;
        let p = softmax(&logits);
        Ok([p[0], p[1], p[2], p[3]])
    }
}
