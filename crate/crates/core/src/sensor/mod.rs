//! Sensor frames, pollutant labels and the ratio feature transform.
//!
//! An optical particle counter reports five cumulative channels: channel `k`
//! counts every particle whose diameter exceeds the `k`-th threshold
//! (0.3, 0.5, 1.0, 2.5 and 5.0 µm, all capped at 10 µm). Because the
//! thresholds nest, a valid frame is non-increasing across channels.
//!
//! Classifiers never see the raw counts. Each frame is reduced to the ten
//! ratios `counts[i] / counts[j]` for `i < j`, which removes the overall
//! intensity of a pollution event and keeps only the shape of the size
//! distribution.

mod csv_io;
mod dataset;
mod scaler;

pub use csv_io::{load_sessions, read_sessions, save_sessions, write_sessions, CSV_HEADER};
pub use dataset::{chronological_split, Dataset, FeatureSequence, FeatureSet, LabeledSequence};
pub use scaler::{standardize_features, Scaler};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CHANNELS: usize = 5;
pub const NUM_FEATURES: usize = 10;
pub const NUM_CLASSES: usize = 4;

/// Lower diameter bound of each channel, in µm.
pub const CHANNEL_THRESHOLDS_UM: [f64; NUM_CHANNELS] = [0.3, 0.5, 1.0, 2.5, 5.0];

/// Channel pairs `(numerator, denominator)` in feature order, zero-based.
pub const RATIO_PAIRS: [(usize, usize); NUM_FEATURES] = [
    (0, 1),
    (0, 2),
    (0, 3),
    (0, 4),
    (1, 2),
    (1, 3),
    (1, 4),
    (2, 3),
    (2, 4),
    (3, 4),
];

/// Human-readable feature names in feature order.
pub fn feature_names() -> Vec<String> {
    RATIO_PAIRS
        .iter()
        .map(|&(i, j)| format!("ch{}/ch{}", i + 1, j + 1))
        .collect()
}

/// Identifier of the feature layout, stored in every model file.
pub fn feature_fingerprint() -> String {
    format!("pm-ratios-v1:{}", feature_names().join(","))
}

/// One of the four pollution scenarios.
///
/// Integer codes are fixed: background 0, ash 1, sand 2, candle 3. They
/// index every probability vector, confusion-matrix axis and logit array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PollutantLabel {
    Background,
    Ash,
    Sand,
    Candle,
}

impl PollutantLabel {
    pub const ALL: [PollutantLabel; NUM_CLASSES] = [
        PollutantLabel::Background,
        PollutantLabel::Ash,
        PollutantLabel::Sand,
        PollutantLabel::Candle,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PollutantLabel::Background => "background",
            PollutantLabel::Ash => "ash",
            PollutantLabel::Sand => "sand",
            PollutantLabel::Candle => "candle",
        }
    }

    /// Label of the largest entry; ties go to the lowest code.
    pub fn argmax(scores: &[f64; NUM_CLASSES]) -> Self {
        let mut best = 0;
        for k in 1..NUM_CLASSES {
            if scores[k] > scores[best] {
                best = k;
            }
        }
        Self::ALL[best]
    }
}

impl fmt::Display for PollutantLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PollutantLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "background" => Ok(PollutantLabel::Background),
            "ash" => Ok(PollutantLabel::Ash),
            "sand" => Ok(PollutantLabel::Sand),
            "candle" => Ok(PollutantLabel::Candle),
            other => Err(Error::Validation(format!("unknown label {other:?}"))),
        }
    }
}

/// One reading of the five cumulative channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    timestamp: u64,
    counts: [f64; NUM_CHANNELS],
}

impl SensorFrame {
    /// Validates counts (finite, non-negative, non-increasing) and builds a frame.
    pub fn new(timestamp: u64, counts: [f64; NUM_CHANNELS]) -> Result<Self> {
        check_counts(&counts)?;
        for k in 1..NUM_CHANNELS {
            if counts[k] > counts[k - 1] {
                return Err(Error::Validation(format!(
                    "nesting violation: channel {} ({}) > channel {} ({})",
                    k + 1,
                    counts[k],
                    k,
                    counts[k - 1]
                )));
            }
        }
        Ok(Self { timestamp, counts })
    }

    pub fn timestamp(&self) -> u64 {
        self.timestamp
    }

    pub fn counts(&self) -> &[f64; NUM_CHANNELS] {
        &self.counts
    }

    pub fn ratios(&self) -> FeatureVector {
        ratios_unchecked(&self.counts)
    }
}

/// The ten pairwise channel ratios of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn as_array(&self) -> &[f64; NUM_FEATURES] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Computes the ratio features of a frame.
///
/// A zero denominator is read as a single particle, so `n / 0` becomes `n`
/// and `0 / 0` becomes 1.
pub fn compute_ratios(frame: &SensorFrame) -> FeatureVector {
    frame.ratios()
}

/// Ratio features straight from raw counts. Only finiteness and sign are
/// checked; nesting is the frame constructor's concern.
pub fn ratios_from_counts(counts: &[f64; NUM_CHANNELS]) -> Result<FeatureVector> {
    check_counts(counts)?;
    Ok(ratios_unchecked(counts))
}

fn check_counts(counts: &[f64; NUM_CHANNELS]) -> Result<()> {
    for (k, &c) in counts.iter().enumerate() {
        if !c.is_finite() {
            return Err(Error::Validation(format!(
                "channel {} count is not finite ({c})",
                k + 1
            )));
        }
        if c < 0.0 {
            return Err(Error::Validation(format!(
                "channel {} count is negative ({c})",
                k + 1
            )));
        }
    }
    Ok(())
}

fn ratios_unchecked(counts: &[f64; NUM_CHANNELS]) -> FeatureVector {
    let mut out = [0.0; NUM_FEATURES];
    for (slot, &(i, j)) in out.iter_mut().zip(RATIO_PAIRS.iter()) {
        let num = counts[i];
        let den = counts[j];
        *slot = if den == 0.0 {
            if num == 0.0 {
                1.0
            } else {
                num
            }
        } else {
            num / den
        };
    }
    FeatureVector(out)
}
