//! Hidden Markov Chain classifier decoded with the discriminative forward
//! recursion.
//!
//! The chain never models the observation law `p(x | y)`. Instead the
//! forward recursion is written in terms of the emission posterior
//! `P(y | x)` (a logistic model) divided by the class prior `P(y)`:
//!
//! ```text
//! alpha_1(i)     = P(y_1 = i | x_1)
//! alpha_{t+1}(i) = P(y = i | x_{t+1}) / P(y = i) * sum_j alpha_t(j) A[j][i]
//! ```
//!
//! `alpha` is renormalized after every step. Normalization only rescales
//! the vector, so the argmax (the prediction) is unchanged, and long
//! streams no longer underflow.

use serde::{Deserialize, Serialize};

use crate::classifier::OnlineClassifier;
use crate::error::{Error, Result};
use crate::optim::{train_logistic, LogisticConfig, LogisticModel, TrainingLog};
use crate::sensor::{FeatureSet, FeatureVector, PollutantLabel, NUM_CLASSES};

pub const DEFAULT_EPSILON: f64 = 1e-6;

type Matrix4 = [[f64; NUM_CLASSES]; NUM_CLASSES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmcModel {
    /// `P(Y = i)`.
    pub prior: [f64; NUM_CLASSES],
    /// Row `j` is `P(Y_{t+1} = . | Y_t = j)`.
    pub transition: Matrix4,
    pub emission: LogisticModel,
    /// Floor applied to transition probabilities during estimation.
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub emission: LogisticConfig,
    pub epsilon: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            emission: LogisticConfig::default(),
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl HmcModel {
    pub fn new(
        prior: [f64; NUM_CLASSES],
        transition: Matrix4,
        emission: LogisticModel,
        epsilon: f64,
    ) -> Result<Self> {
        let model = Self {
            prior,
            transition,
            emission,
            epsilon,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks positivity and stochasticity of prior and transitions.
    pub fn validate(&self) -> Result<()> {
        let stochastic = |row: &[f64; NUM_CLASSES]| {
            row.iter().all(|p| p.is_finite() && *p > 0.0)
                && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9
        };
        if !stochastic(&self.prior) {
            return Err(Error::Format(format!(
                "prior must be positive and sum to 1: {:?}",
                self.prior
            )));
        }
        for (j, row) in self.transition.iter().enumerate() {
            if !stochastic(row) {
                return Err(Error::Format(format!(
                    "transition row {j} must be positive and sum to 1: {row:?}"
                )));
            }
        }
        self.emission.validate()
    }
}

/// Normalized forward vector after `t` observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardState {
    pub alpha: [f64; NUM_CLASSES],
    pub t: usize,
}

/// Class frequencies `N(i) / sum_k N(k)`.
pub fn estimate_prior(labels: &[PollutantLabel]) -> Result<[f64; NUM_CLASSES]> {
    let mut counts = [0usize; NUM_CLASSES];
    for y in labels {
        counts[y.code()] += 1;
    }
    let missing: Vec<&str> = PollutantLabel::ALL
        .iter()
        .filter(|y| counts[y.code()] == 0)
        .map(|y| y.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Training(format!(
            "training data lacks class {}; the forward recursion divides by each prior",
            missing.join(", ")
        )));
    }
    let total = labels.len() as f64;
    let mut prior = [0.0; NUM_CLASSES];
    for k in 0..NUM_CLASSES {
        prior[k] = counts[k] as f64 / total;
    }
    Ok(prior)
}

/// Bigram counts within each session, without smoothing. Row `j` holds
/// `N(j, .)`.
pub fn count_transitions<'a, I>(sessions: I) -> [[u64; NUM_CLASSES]; NUM_CLASSES]
where
    I: IntoIterator<Item = &'a [PollutantLabel]>,
{
    let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for labels in sessions {
        for w in labels.windows(2) {
            counts[w[0].code()][w[1].code()] += 1;
        }
    }
    counts
}

/// Row-normalized bigram frequencies, floored at `epsilon` and renormalized.
/// Rows without outgoing transitions are uniform.
pub fn estimate_transitions<'a, I>(sessions: I, epsilon: f64) -> Result<Matrix4>
where
    I: IntoIterator<Item = &'a [PollutantLabel]>,
{
    if !(epsilon.is_finite() && epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Argument(format!(
            "smoothing epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    let counts = count_transitions(sessions);
    if counts.iter().flatten().all(|&c| c == 0) {
        return Err(Error::Training(
            "no session has two consecutive points; transitions cannot be estimated".into(),
        ));
    }
    let mut matrix = [[0.0; NUM_CLASSES]; NUM_CLASSES];
    for (row, row_counts) in matrix.iter_mut().zip(counts.iter()) {
        let total: u64 = row_counts.iter().sum();
        if total == 0 {
            *row = [1.0 / NUM_CLASSES as f64; NUM_CLASSES];
            continue;
        }
        for (p, &c) in row.iter_mut().zip(row_counts.iter()) {
            *p = (c as f64 / total as f64).max(epsilon);
        }
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(matrix)
}

pub fn forward_init(model: &HmcModel, x: &FeatureVector) -> Result<ForwardState> {
    let alpha = model.emission.predict_proba(x)?;
    Ok(ForwardState {
        alpha: normalize(alpha)?,
        t: 1,
    })
}

pub fn forward_step(
    model: &HmcModel,
    state: &ForwardState,
    x: &FeatureVector,
) -> Result<ForwardState> {
    let posterior = model.emission.predict_proba(x)?;
    let mut alpha = [0.0; NUM_CLASSES];
    for i in 0..NUM_CLASSES {
        let carried: f64 = (0..NUM_CLASSES)
            .map(|j| state.alpha[j] * model.transition[j][i])
            .sum();
        alpha[i] = posterior[i] / model.prior[i] * carried;
    }
    Ok(ForwardState {
        alpha: normalize(alpha)?,
        t: state.t + 1,
    })
}

/// Prediction (argmax, lowest code on ties) and posterior of a state.
pub fn classify_step(state: &ForwardState) -> (PollutantLabel, [f64; NUM_CLASSES]) {
    (PollutantLabel::argmax(&state.alpha), state.alpha)
}

fn normalize(alpha: [f64; NUM_CLASSES]) -> Result<[f64; NUM_CLASSES]> {
    let sum: f64 = alpha.iter().sum();
    if !(sum.is_finite() && sum > 0.0) {
        return Err(Error::Numeric(format!(
            "forward vector cannot be normalized: {alpha:?}"
        )));
    }
    Ok(alpha.map(|a| a / sum))
}

/// Estimates prior and transitions by counting and fits the emission
/// posterior with [`train_logistic`]. The log holds the emission loss.
pub fn train_hmc(train: &FeatureSet, config: &HmcConfig) -> Result<(HmcModel, TrainingLog)> {
    let labels: Vec<PollutantLabel> = train.points().map(|(_, y)| y).collect();
    let prior = estimate_prior(&labels)?;
    let transition = estimate_transitions(
        train.sequences.iter().map(|s| s.labels.as_slice()),
        config.epsilon,
    )?;
    let (emission, log) = train_logistic(train, &config.emission)?;
    let model = HmcModel::new(prior, transition, emission, config.epsilon)?;
    Ok((model, log))
}

/// Labels for one session, starting from a fresh forward state.
pub fn predict_sequence(model: &HmcModel, features: &[FeatureVector]) -> Result<Vec<PollutantLabel>> {
    let mut stream = HmcStream::new(model);
    features
        .iter()
        .map(|x| stream.push(x).map(|p| PollutantLabel::argmax(&p)))
        .collect()
}

/// Per-stream forward state over a shared model.
#[derive(Debug, Clone)]
pub struct HmcStream<'a> {
    model: &'a HmcModel,
    state: Option<ForwardState>,
}

impl<'a> HmcStream<'a> {
    pub fn new(model: &'a HmcModel) -> Self {
        Self { model, state: None }
    }

    pub fn state(&self) -> Option<&ForwardState> {
        self.state.as_ref()
    }
}

impl OnlineClassifier for HmcStream<'_> {
    fn reset(&mut self) {
        self.state = None;
    }

    fn push(&mut self, x: &FeatureVector) -> Result<[f64; NUM_CLASSES]> {
        let next = match &self.state {
            None => forward_init(self.model, x)?,
            Some(s) => forward_step(self.model, s, x)?,
        };
        self.state = Some(next);
        Ok(next.alpha)
    }
}
