//! Shared training machinery: softmax cross-entropy, Adam, and the
//! multinomial logistic model used as the HMC emission posterior.

mod adam;
mod logistic;

pub use adam::{Adam, AdamConfig};
pub use logistic::{train_logistic, LogisticConfig, LogisticModel};

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[target]` and its gradient `softmax - onehot`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if let Some(k) = logits.iter().position(|z| !z.is_finite()) {
        return Err(Error::Numeric(format!("logit {k} is not finite ({})", logits[k])));
    }
    if target >= logits.len() {
        return Err(Error::Argument(format!(
            "target class {target} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum - logits[target];
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - log_sum).exp()).collect();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Training loss trace. Entry `k` is the loss after `k` updates, so the
/// first entry is the loss of the initial parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub losses: Vec<f64>,
}

impl TrainingLog {
    pub fn initial(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// `iteration,loss` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,loss")?;
        for (i, l) in self.losses.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
        w.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}
