use crate::error::Result;
use crate::sensor::{FeatureSet, FeatureVector, PollutantLabel, NUM_CLASSES};

/// Frame-at-a-time classification for one stream.
///
/// Implementations that carry temporal state (HMC, LSTM) keep it until
/// [`reset`](Self::reset); stateless ones ignore it.
pub trait OnlineClassifier {
    fn reset(&mut self);

    /// Consumes one frame and returns the class posterior at that step.
    fn push(&mut self, x: &FeatureVector) -> Result<[f64; NUM_CLASSES]>;
}

/// Runs a classifier over every session, resetting between sessions, and
/// returns the flattened per-frame predictions.
pub fn predict_all(
    classifier: &mut dyn OnlineClassifier,
    data: &FeatureSet,
) -> Result<Vec<PollutantLabel>> {
    let mut out = Vec::with_capacity(data.len());
    for seq in &data.sequences {
        classifier.reset();
        for x in &seq.features {
            out.push(PollutantLabel::argmax(&classifier.push(x)?));
        }
    }
    Ok(out)
}
