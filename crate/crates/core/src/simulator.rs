//! Seeded generator of labeled synthetic sessions.
//!
//! Each channel's log-count is an AR(1) Gaussian process around the
//! profile's log-mean. Transient spikes arrive as a Poisson process and
//! add a decaying log-amplitude shared by every channel. After noise is
//! applied the counts are sorted in descending order so every frame nests.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensor::{Dataset, LabeledSequence, PollutantLabel, SensorFrame, NUM_CHANNELS};

const DEFAULT_PROFILES: &str = include_str!("../profiles/default.toml");

/// Per-second multiplicative decay of a burst's log-amplitude.
const BURST_DECAY: f64 = 0.6;
const BURST_AMPLITUDE: std::ops::Range<f64> = 0.5..1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioProfile {
    pub log_means: [f64; NUM_CHANNELS],
    pub log_stds: [f64; NUM_CHANNELS],
    pub temporal_correlation: f64,
    pub burst_rate: f64,
}

impl ScenarioProfile {
    pub fn validate(&self) -> Result<()> {
        for k in 0..NUM_CHANNELS {
            if !self.log_means[k].is_finite() {
                return Err(Error::Argument(format!(
                    "log mean of channel {} is not finite",
                    k + 1
                )));
            }
            let s = self.log_stds[k];
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Argument(format!(
                    "log std of channel {} must be finite and > 0, got {s}",
                    k + 1
                )));
            }
            if k > 0 && self.log_means[k] > self.log_means[k - 1] {
                return Err(Error::Argument(format!(
                    "mean of channel {} exceeds channel {}",
                    k + 1,
                    k
                )));
            }
        }
        let rho = self.temporal_correlation;
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Argument(format!(
                "temporal correlation must lie in [0, 1), got {rho}"
            )));
        }
        if !(self.burst_rate.is_finite() && self.burst_rate >= 0.0) {
            return Err(Error::Argument(format!(
                "burst rate must be >= 0, got {}",
                self.burst_rate
            )));
        }
        Ok(())
    }
}

/// Profile per label, as read from a profile config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProfileSet(pub BTreeMap<PollutantLabel, ScenarioProfile>);

impl ProfileSet {
    pub fn parse(text: &str) -> Result<Self> {
        let set: ProfileSet =
            toml::from_str(text).map_err(|e| Error::Format(format!("profile config: {e}")))?;
        for (label, p) in &set.0 {
            p.validate()
                .map_err(|e| Error::Format(format!("profile {label}: {e}")))?;
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The shipped profiles (`profiles/default.toml`).
    pub fn default_profiles() -> Self {
        Self::parse(DEFAULT_PROFILES).expect("shipped profile config is valid")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profiles serialize")
    }

    pub fn get(&self, label: PollutantLabel) -> Option<&ScenarioProfile> {
        self.0.get(&label)
    }
}

/// Ordered sessions to simulate: `(label, duration in seconds)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionPlan {
    pub entries: Vec<(PollutantLabel, u32)>,
}

impl SessionPlan {
    pub fn new(entries: Vec<(PollutantLabel, u32)>) -> Result<Self> {
        if let Some((label, _)) = entries.iter().find(|(_, d)| *d == 0) {
            return Err(Error::Argument(format!("session for {label} has zero duration")));
        }
        Ok(Self { entries })
    }

    pub fn total_duration(&self) -> u64 {
        self.entries.iter().map(|&(_, d)| d as u64).sum()
    }

    pub fn duration_of(&self, label: PollutantLabel) -> u64 {
        self.entries
            .iter()
            .filter(|(l, _)| *l == label)
            .map(|&(_, d)| d as u64)
            .sum()
    }

    pub fn sessions_of(&self, label: PollutantLabel) -> usize {
        self.entries.iter().filter(|(l, _)| *l == label).count()
    }
}

impl FromStr for SessionPlan {
    type Err = Error;

    /// Parses `label:seconds` entries separated by commas, e.g. `sand:10,ash:20`.
    fn from_str(s: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (label, secs) = part
                .split_once(':')
                .ok_or_else(|| Error::Argument(format!("plan entry {part:?} is not label:seconds")))?;
            let label: PollutantLabel = label
                .trim()
                .parse()
                .map_err(|e: Error| Error::Argument(e.to_string()))?;
            let secs: u32 = secs
                .trim()
                .parse()
                .map_err(|_| Error::Argument(format!("bad duration in plan entry {part:?}")))?;
            entries.push((label, secs));
        }
        Self::new(entries)
    }
}

/// Ten sessions totalling 1500 s.
///
/// Background 180+180+180+60 s, sand 180+180 s, ash 180+60+120 s and one
/// candle session of 180 s. The sessions are interleaved so that a 70/30
/// chronological split leaves every label in both halves: the single
/// candle session spans the cut at 1050 s.
pub fn default_session_plan() -> SessionPlan {
    use PollutantLabel::*;
    SessionPlan {
        entries: vec![
            (Background, 180),
            (Sand, 180),
            (Ash, 180),
            (Background, 180),
            (Ash, 60),
            (Background, 180),
            (Candle, 180),
            (Sand, 180),
            (Ash, 120),
            (Background, 60),
        ],
    }
}

/// One session of `duration` frames at 1 Hz, timestamps starting at 0.
pub fn generate_session(
    profile: &ScenarioProfile,
    label: PollutantLabel,
    session_id: &str,
    duration: u32,
    seed: u64,
) -> Result<LabeledSequence> {
    profile.validate()?;
    if duration == 0 {
        return Err(Error::Argument("session duration must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = profile.temporal_correlation;
    let innovation = (1.0 - rho * rho).sqrt();
    let burst_prob = 1.0 - (-profile.burst_rate / 60.0).exp();

    let mut noise = [0.0; NUM_CHANNELS];
    for (k, z) in noise.iter_mut().enumerate() {
        let e: f64 = rng.sample(StandardNormal);
        *z = profile.log_stds[k] * e;
    }
    let mut burst = 0.0;

    let mut frames = Vec::with_capacity(duration as usize);
    for t in 0..duration {
        if t > 0 {
            for (k, z) in noise.iter_mut().enumerate() {
                let e: f64 = rng.sample(StandardNormal);
                *z = rho * *z + innovation * profile.log_stds[k] * e;
            }
            burst *= BURST_DECAY;
        }
        if rng.random::<f64>() < burst_prob {
            burst += rng.random_range(BURST_AMPLITUDE);
        }
        let mut counts = [0.0; NUM_CHANNELS];
        for k in 0..NUM_CHANNELS {
            counts[k] = (profile.log_means[k] + noise[k] + burst).exp();
        }
        counts.sort_by(|a, b| b.total_cmp(a));
        frames.push(SensorFrame::new(t as u64, counts)?);
    }
    LabeledSequence::new(session_id, frames, vec![label; duration as usize])
}

/// One session per plan entry; entry `i` is generated with seed `seed + i`.
pub fn generate_corpus(plan: &SessionPlan, profiles: &ProfileSet, seed: u64) -> Result<Dataset> {
    let mut sequences = Vec::with_capacity(plan.entries.len());
    for (i, &(label, duration)) in plan.entries.iter().enumerate() {
        let profile = profiles
            .get(label)
            .ok_or_else(|| Error::Argument(format!("no scenario profile for label {label}")))?;
        let id = format!("s{i:02}-{label}");
        sequences.push(generate_session(
            profile,
            label,
            &id,
            duration,
            seed.wrapping_add(i as u64),
        )?);
    }
    Ok(Dataset::new(sequences))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::{chronological_split, write_sessions};

    fn csv_bytes(ds: &Dataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_sessions(&mut buf, ds).unwrap();
        buf
    }

    #[test]
    fn default_plan_matches_the_recorded_campaign() {
        use PollutantLabel::*;
        let plan = default_session_plan();
        assert_eq!(plan.total_duration(), 1500);
        assert_eq!(plan.entries.len(), 10);
        assert_eq!(plan.duration_of(Background), 600);
        assert_eq!(plan.sessions_of(Background), 4);
        assert_eq!(plan.duration_of(Sand), 360);
        assert_eq!(plan.sessions_of(Sand), 2);
        assert_eq!(plan.duration_of(Ash), 360);
        assert_eq!(plan.sessions_of(Ash), 3);
        assert_eq!(plan.duration_of(Candle), 180);
        assert_eq!(plan.sessions_of(Candle), 1);
    }

    #[test]
    fn default_split_keeps_every_label_on_both_sides() {
        let ds = generate_corpus(&default_session_plan(), &ProfileSet::default_profiles(), 7).unwrap();
        let (train, test) = chronological_split(&ds, 0.7).unwrap();
        assert_eq!((train.len(), test.len()), (1050, 450));
        for part in [&train, &test] {
            let counts = part.features().class_counts();
            assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
        }
    }

    #[test]
    fn frames_nest_and_runs_are_reproducible() {
        let profiles = ProfileSet::default_profiles();
        for label in PollutantLabel::ALL {
            let p = profiles.get(label).unwrap();
            let a = generate_session(p, label, "x", 300, 42).unwrap();
            let b = generate_session(p, label, "x", 300, 42).unwrap();
            assert_eq!(a, b);
            for f in a.frames() {
                let c = f.counts();
                assert!(c.windows(2).all(|w| w[0] >= w[1]));
            }
            let ds_a = Dataset::new(vec![a]);
            let ds_b = Dataset::new(vec![b]);
            assert_eq!(csv_bytes(&ds_a), csv_bytes(&ds_b));
        }
    }

    #[test]
    fn degenerate_profile_is_constant() {
        let p = ScenarioProfile {
            log_means: [7.0, 6.0, 5.0, 3.0, 1.0],
            log_stds: [1e-15; 5],
            temporal_correlation: 0.0,
            burst_rate: 0.0,
        };
        let seq = generate_session(&p, PollutantLabel::Sand, "d", 50, 3).unwrap();
        for f in seq.frames() {
            for k in 0..NUM_CHANNELS {
                let expected = p.log_means[k].exp();
                assert!((f.counts()[k] - expected).abs() <= 1e-9 * expected);
            }
        }
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        let good = ProfileSet::default_profiles().get(PollutantLabel::Ash).unwrap().clone();
        let mut bad = good.clone();
        bad.log_stds[2] = 0.0;
        assert!(generate_session(&bad, PollutantLabel::Ash, "x", 5, 0).is_err());
        let mut bad = good.clone();
        bad.temporal_correlation = 1.0;
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.log_means[4] = 20.0;
        assert!(bad.validate().is_err());
        assert!(generate_session(&good, PollutantLabel::Ash, "x", 0, 0).is_err());
    }

    #[test]
    fn corpus_shapes() {
        let profiles = ProfileSet::default_profiles();
        let ds = generate_corpus(&default_session_plan(), &profiles, 1).unwrap();
        assert_eq!(ds.sequences().len(), 10);
        assert_eq!(ds.len(), 1500);
        assert_eq!(ds, generate_corpus(&default_session_plan(), &profiles, 1).unwrap());
        assert_ne!(ds, generate_corpus(&default_session_plan(), &profiles, 2).unwrap());

        let empty = generate_corpus(&SessionPlan::new(vec![]).unwrap(), &profiles, 1).unwrap();
        assert!(empty.is_empty());

        let mut partial = profiles.clone();
        partial.0.remove(&PollutantLabel::Candle);
        let err = generate_corpus(&default_session_plan(), &partial, 1).unwrap_err();
        assert!(err.to_string().contains("candle"), "{err}");
    }

    #[test]
    fn plan_strings_parse() {
        let plan: SessionPlan = "sand:10, ash:5".parse().unwrap();
        assert_eq!(
            plan.entries,
            vec![(PollutantLabel::Sand, 10), (PollutantLabel::Ash, 5)]
        );
        assert!("sand".parse::<SessionPlan>().is_err());
        assert!("sand:0".parse::<SessionPlan>().is_err());
        assert!("smoke:3".parse::<SessionPlan>().is_err());
    }

    #[test]
    fn profile_config_round_trips() {
        let profiles = ProfileSet::default_profiles();
        assert_eq!(profiles.0.len(), 4);
        assert_eq!(ProfileSet::parse(&profiles.to_toml()).unwrap(), profiles);
        assert!(ProfileSet::parse("[smoke]\nlog_means = [1,1,1,1,1]").is_err());
    }
}
