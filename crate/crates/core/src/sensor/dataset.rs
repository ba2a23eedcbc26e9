use serde::{Deserialize, Serialize};

use super::{FeatureVector, PollutantLabel, SensorFrame, NUM_CLASSES};
use crate::error::{Error, Result};

/// A contiguous recording of one session with a label per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    session_id: String,
    frames: Vec<SensorFrame>,
    labels: Vec<PollutantLabel>,
}

impl LabeledSequence {
    pub fn new(
        session_id: impl Into<String>,
        frames: Vec<SensorFrame>,
        labels: Vec<PollutantLabel>,
    ) -> Result<Self> {
        let session_id = session_id.into();
        if frames.len() != labels.len() {
            return Err(Error::Validation(format!(
                "session {session_id}: {} frames but {} labels",
                frames.len(),
                labels.len()
            )));
        }
        for w in frames.windows(2) {
            if w[1].timestamp() <= w[0].timestamp() {
                return Err(Error::Validation(format!(
                    "session {session_id}: timestamp {} does not follow {}",
                    w[1].timestamp(),
                    w[0].timestamp()
                )));
            }
        }
        Ok(Self {
            session_id,
            frames,
            labels,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn frames(&self) -> &[SensorFrame] {
        &self.frames
    }

    pub fn labels(&self) -> &[PollutantLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn features(&self) -> Vec<FeatureVector> {
        self.frames.iter().map(SensorFrame::ratios).collect()
    }

    // Sub-range of an already validated sequence.
    fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            session_id: self.session_id.clone(),
            frames: self.frames[range.clone()].to_vec(),
            labels: self.labels[range].to_vec(),
        }
    }
}

/// Ordered collection of sessions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    sequences: Vec<LabeledSequence>,
}

impl Dataset {
    pub fn new(sequences: Vec<LabeledSequence>) -> Self {
        Self { sequences }
    }

    pub fn sequences(&self) -> &[LabeledSequence] {
        &self.sequences
    }

    pub fn into_sequences(self) -> Vec<LabeledSequence> {
        self.sequences
    }

    /// Total number of frames across sessions.
    pub fn len(&self) -> usize {
        self.sequences.iter().map(LabeledSequence::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Labels of every frame in session order.
    pub fn labels(&self) -> Vec<PollutantLabel> {
        self.sequences
            .iter()
            .flat_map(|s| s.labels.iter().copied())
            .collect()
    }

    /// Per-frame ratio features, one sequence per session.
    pub fn features(&self) -> FeatureSet {
        FeatureSet::new(
            self.sequences
                .iter()
                .map(|s| FeatureSequence {
                    session_id: s.session_id.clone(),
                    features: s.features(),
                    labels: s.labels.clone(),
                })
                .collect(),
        )
    }
}

/// Per-session feature vectors with their labels; the form every trainer
/// consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub session_id: String,
    pub features: Vec<FeatureVector>,
    pub labels: Vec<PollutantLabel>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureSet {
    pub sequences: Vec<FeatureSequence>,
}

impl FeatureSet {
    pub fn new(sequences: Vec<FeatureSequence>) -> Self {
        Self { sequences }
    }

    pub fn len(&self) -> usize {
        self.sequences.iter().map(FeatureSequence::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Iterates `(features, label)` over every point in session order.
    pub fn points(&self) -> impl Iterator<Item = (&FeatureVector, PollutantLabel)> {
        self.sequences
            .iter()
            .flat_map(|s| s.features.iter().zip(s.labels.iter().copied()))
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for (_, y) in self.points() {
            counts[y.code()] += 1;
        }
        counts
    }
}

/// Splits the concatenated point sequence without shuffling.
///
/// The first `floor(train_fraction * N)` points go to the training set. A
/// session that straddles the cut is split in two, both halves keeping the
/// session id.
pub fn chronological_split(dataset: &Dataset, train_fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let total = dataset.len();
    if total == 0 {
        return Err(Error::Argument("cannot split an empty dataset".into()));
    }
    // The small offset keeps products such as 0.7 * 10 from flooring to 6.
    let cut = ((train_fraction * total as f64) + 1e-9).floor() as usize;

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut start = 0;
    for seq in &dataset.sequences {
        let end = start + seq.len();
        if end <= cut {
            train.push(seq.clone());
        } else if start >= cut {
            test.push(seq.clone());
        } else {
            let local = cut - start;
            train.push(seq.slice(0..local));
            test.push(seq.slice(local..seq.len()));
        }
        start = end;
    }
    Ok((Dataset::new(train), Dataset::new(test)))
}
