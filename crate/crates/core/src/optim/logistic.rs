use serde::{Deserialize, Serialize};

use super::{softmax, softmax_cross_entropy, Adam, AdamConfig, TrainingLog};
use crate::error::{Error, Result};
use crate::sensor::{
    standardize_features, FeatureSet, FeatureVector, PollutantLabel, Scaler, NUM_CLASSES,
    NUM_FEATURES,
};

/// Number of trainable parameters: the weight matrix then the bias.
pub const NUM_PARAMS: usize = NUM_CLASSES * NUM_FEATURES + NUM_CLASSES;

/// Multinomial logistic regression `softmax(W z + b)` on standardized input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Row `k` holds the weights of class `k`.
    pub weights: [[f64; NUM_FEATURES]; NUM_CLASSES],
    pub bias: [f64; NUM_CLASSES],
    pub scaler: Scaler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            learning_rate: 0.01,
        }
    }
}

impl LogisticModel {
    pub fn zeros(scaler: Scaler) -> Self {
        Self {
            weights: [[0.0; NUM_FEATURES]; NUM_CLASSES],
            bias: [0.0; NUM_CLASSES],
            scaler,
        }
    }

    pub fn new(
        weights: [[f64; NUM_FEATURES]; NUM_CLASSES],
        bias: [f64; NUM_CLASSES],
        scaler: Scaler,
    ) -> Result<Self> {
        let model = Self {
            weights,
            bias,
            scaler,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.weights.iter().flatten().all(|w| w.is_finite())
            && self.bias.iter().all(|b| b.is_finite())
            && self.scaler.mean.iter().all(|m| m.is_finite())
            && self.scaler.std.iter().all(|s| s.is_finite() && *s > 0.0);
        if finite {
            Ok(())
        } else {
            Err(Error::Format("logistic parameters must be finite".into()))
        }
    }

    /// Logits of already standardized input.
    pub fn logits_scaled(&self, z: &FeatureVector) -> [f64; NUM_CLASSES] {
        let mut out = self.bias;
        for (k, row) in self.weights.iter().enumerate() {
            out[k] += row.iter().zip(z.0.iter()).map(|(w, x)| w * x).sum::<f64>();
        }
        out
    }

    /// Class probabilities for raw ratio features.
    pub fn predict_proba(&self, x: &FeatureVector) -> Result<[f64; NUM_CLASSES]> {
        if !x.is_finite() {
            return Err(Error::Numeric("non-finite feature vector".into()));
        }
        let logits = self.logits_scaled(&self.scaler.transform(x));
        let p = softmax(&logits);
        Ok([p[0], p[1], p[2], p[3]])
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(NUM_PARAMS);
        p.extend(self.weights.iter().flatten());
        p.extend(self.bias.iter());
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != NUM_PARAMS {
            return Err(Error::Argument(format!(
                "expected {NUM_PARAMS} logistic parameters, got {}",
                params.len()
            )));
        }
        for k in 0..NUM_CLASSES {
            self.weights[k].copy_from_slice(&params[k * NUM_FEATURES..(k + 1) * NUM_FEATURES]);
        }
        self.bias
            .copy_from_slice(&params[NUM_CLASSES * NUM_FEATURES..]);
        Ok(())
    }

    /// Mean cross-entropy over standardized points and its gradient in
    /// [`params`](Self::params) layout.
    pub fn loss_and_gradient(
        &self,
        scaled: &[FeatureVector],
        labels: &[PollutantLabel],
    ) -> Result<(f64, Vec<f64>)> {
        if scaled.len() != labels.len() || scaled.is_empty() {
            return Err(Error::Argument(format!(
                "{} points but {} labels",
                scaled.len(),
                labels.len()
            )));
        }
        let n = scaled.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; NUM_PARAMS];
        let bias_off = NUM_CLASSES * NUM_FEATURES;
        for (z, y) in scaled.iter().zip(labels) {
            let (l, dlogits) = softmax_cross_entropy(&self.logits_scaled(z), y.code())?;
            loss += l;
            for k in 0..NUM_CLASSES {
                let row = &mut grad[k * NUM_FEATURES..(k + 1) * NUM_FEATURES];
                for (g, x) in row.iter_mut().zip(z.0.iter()) {
                    *g += dlogits[k] * x;
                }
                grad[bias_off + k] += dlogits[k];
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, grad))
    }
}

/// Full-batch Adam on the mean cross-entropy, starting from zero weights.
///
/// The scaler is fitted on `train` and attached to the returned model.
pub fn train_logistic(
    train: &FeatureSet,
    config: &LogisticConfig,
) -> Result<(LogisticModel, TrainingLog)> {
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let counts = train.class_counts();
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Training(format!(
            "class {} does not occur in the training set",
            PollutantLabel::ALL[k]
        )));
    }
    let (scaler, scaled) = standardize_features(train)?;
    let (xs, ys): (Vec<FeatureVector>, Vec<PollutantLabel>) =
        scaled.points().map(|(x, y)| (*x, y)).unzip();

    let mut model = LogisticModel::zeros(scaler);
    let mut params = model.params();
    let mut adam = Adam::new(AdamConfig::with_learning_rate(config.learning_rate), NUM_PARAMS)?;
    let mut log = TrainingLog::default();
    for _ in 0..config.iterations {
        let (loss, grad) = model.loss_and_gradient(&xs, &ys)?;
        log.losses.push(loss);
        adam.step(&mut params, &grad)?;
        model.set_params(&params)?;
    }
    log.losses.push(model.loss_and_gradient(&xs, &ys)?.0);
    if let Some(bad) = log.losses.iter().find(|l| !l.is_finite()) {
        return Err(Error::Numeric(format!("logistic training diverged (loss {bad})")));
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::FeatureSequence;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Four separable blobs, one per class, along distinct features.
    fn toy_set(per_class: usize, seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sequences = PollutantLabel::ALL
            .iter()
            .map(|&label| {
                let features = (0..per_class)
                    .map(|_| {
                        let mut x = [0.0; NUM_FEATURES];
                        for v in x.iter_mut() {
                            *v = 1.0 + rng.random::<f64>();
                        }
                        x[label.code()] += 5.0;
                        FeatureVector(x)
                    })
                    .collect();
                FeatureSequence {
                    session_id: label.to_string(),
                    features,
                    labels: vec![label; per_class],
                }
            })
            .collect();
        FeatureSet::new(sequences)
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = LogisticModel::zeros(Scaler::identity());
        assert_eq!(m.predict_proba(&FeatureVector([3.0; 10])).unwrap(), [0.25; 4]);
    }

    #[test]
    fn zero_iterations_give_uniform_predictor() {
        let cfg = LogisticConfig {
            iterations: 0,
            learning_rate: 0.01,
        };
        let (model, log) = train_logistic(&toy_set(5, 1), &cfg).unwrap();
        assert_eq!(log.losses.len(), 1);
        assert!((log.losses[0] - 4f64.ln()).abs() < 1e-12);
        assert_eq!(model.predict_proba(&FeatureVector([2.0; 10])).unwrap(), [0.25; 4]);
    }

    #[test]
    fn separable_toy_is_learned() {
        let data = toy_set(20, 2);
        let cfg = LogisticConfig {
            iterations: 500,
            learning_rate: 0.05,
        };
        let (model, log) = train_logistic(&data, &cfg).unwrap();
        assert!((log.initial().unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(log.last().unwrap() < log.initial().unwrap());
        for (x, y) in data.points() {
            let p = model.predict_proba(x).unwrap();
            assert_eq!(PollutantLabel::argmax(&p), y);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_set(10, 3);
        let cfg = LogisticConfig {
            iterations: 50,
            learning_rate: 0.01,
        };
        assert_eq!(
            train_logistic(&data, &cfg).unwrap(),
            train_logistic(&data, &cfg).unwrap()
        );
    }

    #[test]
    fn missing_class_is_a_training_error() {
        let mut data = toy_set(5, 4);
        data.sequences.pop();
        assert!(matches!(
            train_logistic(&data, &LogisticConfig::default()),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn probabilities_sum_to_one_and_follow_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut w = [[0.0; NUM_FEATURES]; NUM_CLASSES];
        w.iter_mut()
            .flatten()
            .for_each(|v| *v = rng.random_range(-2.0..2.0));
        let m = LogisticModel::new(w, [0.1, -0.2, 0.3, 0.0], Scaler::identity()).unwrap();
        for _ in 0..100 {
            let mut x = [0.0; NUM_FEATURES];
            x.iter_mut().for_each(|v| *v = rng.random_range(-3.0..3.0));
            let x = FeatureVector(x);
            let p = m.predict_proba(&x).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(
                PollutantLabel::argmax(&p),
                PollutantLabel::argmax(&m.logits_scaled(&x))
            );
        }
        assert!(m.predict_proba(&FeatureVector([f64::NAN; 10])).is_err());
    }
}
