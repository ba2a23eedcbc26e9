//! Reference implementations used as oracles by the integration tests.
//!
//! Everything here is written the slow, obvious way and deliberately shares
//! no code with the library beyond its data types.
#![allow(dead_code)]

use pmclass::hmc::HmcModel;
use pmclass::optim::LogisticModel;
use pmclass::sensor::{FeatureVector, PollutantLabel, Scaler, NUM_CLASSES, NUM_FEATURES};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_simplex(rng: &mut ChaCha8Rng) -> [f64; NUM_CLASSES] {
    let raw: [f64; NUM_CLASSES] = std::array::from_fn(|_| rng.random_range(0.05..1.0));
    let s: f64 = raw.iter().sum();
    raw.map(|v| v / s)
}

pub fn random_features(rng: &mut ChaCha8Rng, n: usize) -> Vec<FeatureVector> {
    (0..n)
        .map(|_| FeatureVector(std::array::from_fn(|_| rng.random_range(-2.0..2.0))))
        .collect()
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<PollutantLabel> {
    (0..n)
        .map(|_| PollutantLabel::ALL[rng.random_range(0..NUM_CLASSES)])
        .collect()
}

pub fn random_logistic(rng: &mut ChaCha8Rng) -> LogisticModel {
    let mut m = LogisticModel::zeros(Scaler::identity());
    for row in m.weights.iter_mut() {
        for w in row.iter_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
    }
    for b in m.bias.iter_mut() {
        *b = rng.random_range(-1.0..1.0);
    }
    m
}

pub fn random_hmc(rng: &mut ChaCha8Rng) -> HmcModel {
    let prior = random_simplex(rng);
    let transition = std::array::from_fn(|_| random_simplex(rng));
    HmcModel::new(prior, transition, random_logistic(rng), 1e-6).unwrap()
}

/// Softmax of `W x + b` computed directly.
pub fn logistic_posterior(m: &LogisticModel, x: &FeatureVector) -> [f64; NUM_CLASSES] {
    let mut z = [0.0; NUM_CLASSES];
    for k in 0..NUM_CLASSES {
        z[k] = m.bias[k];
        for j in 0..NUM_FEATURES {
            z[k] += m.weights[k][j] * (x[j] - m.scaler.mean[j]) / m.scaler.std[j];
        }
    }
    let top = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - top).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// Posterior of the last label given every frame, by summing over all
/// `4^T` label paths. The path weight uses the emission score
/// `P(y | x) / P(y)` at every step and the prior on the first label.
pub fn brute_force_posterior(model: &HmcModel, xs: &[FeatureVector]) -> [f64; NUM_CLASSES] {
    let t = xs.len();
    let emission: Vec<[f64; NUM_CLASSES]> = xs
        .iter()
        .map(|x| {
            let p = logistic_posterior(&model.emission, x);
            std::array::from_fn(|k| p[k] / model.prior[k])
        })
        .collect();
    let mut marginal = [0.0; NUM_CLASSES];
    let paths = NUM_CLASSES.pow(t as u32);
    let mut path = vec![0usize; t];
    for code in 0..paths {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % NUM_CLASSES;
            c /= NUM_CLASSES;
        }
        let mut w = model.prior[path[0]] * emission[0][path[0]];
        for s in 1..t {
            w *= model.transition[path[s - 1]][path[s]] * emission[s][path[s]];
        }
        marginal[path[t - 1]] += w;
    }
    let total: f64 = marginal.iter().sum();
    marginal.map(|v| v / total)
}

/// Exhaustive split search recomputing every side sum from scratch.
/// Returns the best gain (or `None` when no split has positive gain).
pub fn brute_force_best_gain(
    features: &[FeatureVector],
    grad: &[f64],
    hess: &[f64],
    lambda: f64,
    gamma: f64,
) -> Option<f64> {
    let mut best: Option<f64> = None;
    for f in 0..NUM_FEATURES {
        let mut values: Vec<f64> = features.iter().map(|x| x[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let thr = 0.5 * (w[0] + w[1]);
            if let Some(g) = split_gain(features, grad, hess, lambda, gamma, f, thr) {
                if g > 0.0 && best.is_none_or(|b| g > b) {
                    best = Some(g);
                }
            }
        }
    }
    best
}

/// Gain of one candidate split, `None` if a side is empty.
pub fn split_gain(
    features: &[FeatureVector],
    grad: &[f64],
    hess: &[f64],
    lambda: f64,
    gamma: f64,
    feature: usize,
    threshold: f64,
) -> Option<f64> {
    let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
    let (mut nl, mut nr) = (0, 0);
    for (i, x) in features.iter().enumerate() {
        if x[feature] <= threshold {
            gl += grad[i];
            hl += hess[i];
            nl += 1;
        } else {
            gr += grad[i];
            hr += hess[i];
            nr += 1;
        }
    }
    if nl == 0 || nr == 0 {
        return None;
    }
    let (g, h) = (gl + gr, hl + hr);
    Some(0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)) - gamma)
}

/// Scalar per-class counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fneg: u64,
}

pub fn class_counts(truth: &[PollutantLabel], pred: &[PollutantLabel], k: PollutantLabel) -> ClassCounts {
    let mut c = ClassCounts::default();
    for (t, p) in truth.iter().zip(pred) {
        match (*t == k, *p == k) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fneg += 1,
            (false, false) => {}
        }
    }
    c
}

pub fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Relative error with a small floor so near-zero gradients compare by
/// absolute difference.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences of `f` at `params`.
pub fn numeric_gradient(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}
