use serde::{Deserialize, Serialize};

use super::{FeatureSequence, FeatureSet, FeatureVector, NUM_FEATURES};
use crate::error::{Error, Result};

/// Per-feature z-score transform fitted on training data.
///
/// Uses the population standard deviation; a zero deviation is stored as 1
/// so constant columns map to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: [f64; NUM_FEATURES],
    pub std: [f64; NUM_FEATURES],
}

impl Scaler {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; NUM_FEATURES],
            std: [1.0; NUM_FEATURES],
        }
    }

    pub fn fit<'a, I>(features: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a FeatureVector>,
    {
        let rows: Vec<&FeatureVector> = features.into_iter().collect();
        if rows.is_empty() {
            return Err(Error::Argument("cannot fit a scaler on no data".into()));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; NUM_FEATURES];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.0.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; NUM_FEATURES];
        for r in &rows {
            for d in 0..NUM_FEATURES {
                let c = r.0[d] - mean[d];
                var[d] += c * c;
            }
        }
        let mut std = [1.0; NUM_FEATURES];
        for d in 0..NUM_FEATURES {
            let s = (var[d] / n).sqrt();
            if s > 0.0 && s.is_finite() {
                std[d] = s;
            }
        }
        Ok(Self { mean, std })
    }

    pub fn transform(&self, x: &FeatureVector) -> FeatureVector {
        let mut out = [0.0; NUM_FEATURES];
        for d in 0..NUM_FEATURES {
            out[d] = (x.0[d] - self.mean[d]) / self.std[d];
        }
        FeatureVector(out)
    }

    pub fn inverse(&self, z: &FeatureVector) -> FeatureVector {
        let mut out = [0.0; NUM_FEATURES];
        for d in 0..NUM_FEATURES {
            out[d] = z.0[d] * self.std[d] + self.mean[d];
        }
        FeatureVector(out)
    }

    pub fn transform_set(&self, set: &FeatureSet) -> FeatureSet {
        FeatureSet::new(
            set.sequences
                .iter()
                .map(|s| FeatureSequence {
                    session_id: s.session_id.clone(),
                    features: s.features.iter().map(|x| self.transform(x)).collect(),
                    labels: s.labels.clone(),
                })
                .collect(),
        )
    }
}

/// Fits a scaler on `train` and returns it with the standardized set.
pub fn standardize_features(train: &FeatureSet) -> Result<(Scaler, FeatureSet)> {
    let scaler = Scaler::fit(train.points().map(|(x, _)| x))?;
    let scaled = scaler.transform_set(train);
    Ok((scaler, scaled))
}
