//! Persisted models.
//!
//! A model file is a JSON document:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "feature_fingerprint": "pm-ratios-v1:ch1/ch2,...",
//!   "feature_order": ["ch1/ch2", "ch1/ch3", ...],
//!   "model": { "kind": "hmc" | "lstm" | "gbdt", ... }
//! }
//! ```
//!
//! * `hmc`: `prior` (4), `transition` (4 x 4, row = from-state),
//!   `emission.weights` (4 x 10, row = class), `emission.bias` (4),
//!   `emission.scaler.{mean,std}` (10 each), `epsilon`.
//! * `lstm`: `hidden`, `seed`, `scaler`, and `tensors`, a list of
//!   `{name, shape, data}` with `data` row-major. Shapes with `H` hidden
//!   units: `W_f W_i W_o W_c` (H, 10), `U_f U_i U_o U_c` (H, H),
//!   `b_f b_i b_o b_c` (H), `V` (4, H), `v` (4).
//! * `gbdt`: `eta`, `lambda`, `gamma`, `max_depth`, `min_points`,
//!   `base_score`, and `trees`, one list per tree in round-major, class-minor
//!   order. Each tree is its pre-order node list; a node is
//!   `{"tag": "split", "feature", "threshold"}` (left child first, `x <=
//!   threshold` goes left) or `{"tag": "leaf", "weight"}`.
//!
//! Loading refuses a file whose fingerprint differs from the one this build
//! computes features with.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::OnlineClassifier;
use crate::error::{Error, Result};
use crate::gbdt::{GbdtConfig, GbdtModel, GbdtStream, NodeRecord, TreeNode};
use crate::hmc::{HmcModel, HmcStream};
use crate::lstm::{Layout, LstmModel, LstmStream};
use crate::sensor::{feature_fingerprint, feature_names, Scaler, NUM_CLASSES, NUM_FEATURES};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelKind {
    Hmc,
    Lstm,
    Gbdt,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Hmc => "hmc",
            ModelKind::Lstm => "lstm",
            ModelKind::Gbdt => "gbdt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Hmc(HmcModel),
    Lstm(LstmModel),
    Gbdt(GbdtModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Hmc(_) => ModelKind::Hmc,
            Model::Lstm(_) => ModelKind::Lstm,
            Model::Gbdt(_) => ModelKind::Gbdt,
        }
    }

    /// Fresh online classifier in its initial state.
    pub fn stream(&self) -> Box<dyn OnlineClassifier + '_> {
        match self {
            Model::Hmc(m) => Box::new(HmcStream::new(m)),
            Model::Lstm(m) => Box::new(LstmStream::new(m)),
            Model::Gbdt(m) => Box::new(GbdtStream::new(m)),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = Envelope {
            schema_version: SCHEMA_VERSION,
            feature_fingerprint: feature_fingerprint(),
            feature_order: feature_names(),
            model: ModelDoc::from_model(self),
        };
        let mut text = serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::Format(format!("cannot serialize model: {e}")))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let header: Header = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("not a model file: {e}")))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        let expected = feature_fingerprint();
        if header.feature_fingerprint != expected {
            return Err(Error::Format(format!(
                "feature fingerprint mismatch: model has {:?}, this build computes {:?}",
                header.feature_fingerprint, expected
            )));
        }
        let doc: Envelope = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("malformed model: {e}")))?;
        if doc.feature_order != feature_names() {
            return Err(Error::Format("feature order does not match fingerprint".into()));
        }
        doc.model.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Deserialize)]
struct Header {
    schema_version: u32,
    feature_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    schema_version: u32,
    feature_fingerprint: String,
    feature_order: Vec<String>,
    model: ModelDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelDoc {
    Hmc(HmcModel),
    Lstm(LstmDoc),
    Gbdt(GbdtDoc),
}

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LstmDoc {
    hidden: usize,
    seed: u64,
    scaler: Scaler,
    tensors: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct GbdtDoc {
    eta: f64,
    lambda: f64,
    gamma: f64,
    max_depth: usize,
    min_points: usize,
    base_score: f64,
    trees: Vec<Vec<NodeRecord>>,
}

const GATE_SUFFIX: [&str; 4] = ["f", "i", "o", "c"];

/// Names and shapes in flat-vector order.
fn lstm_tensor_specs(hidden: usize) -> Vec<(String, Vec<usize>)> {
    let mut specs = Vec::new();
    for g in GATE_SUFFIX {
        specs.push((format!("W_{g}"), vec![hidden, NUM_FEATURES]));
    }
    for g in GATE_SUFFIX {
        specs.push((format!("U_{g}"), vec![hidden, hidden]));
    }
    for g in GATE_SUFFIX {
        specs.push((format!("b_{g}"), vec![hidden]));
    }
    specs.push(("V".into(), vec![NUM_CLASSES, hidden]));
    specs.push(("v".into(), vec![NUM_CLASSES]));
    specs
}

impl ModelDoc {
    fn from_model(model: &Model) -> Self {
        match model {
            Model::Hmc(m) => ModelDoc::Hmc(m.clone()),
            Model::Lstm(m) => {
                let mut params = m.params();
                let tensors = lstm_tensor_specs(m.hidden())
                    .into_iter()
                    .map(|(name, shape)| {
                        let n: usize = shape.iter().product();
                        let (head, rest) = params.split_at(n);
                        params = rest;
                        Tensor {
                            name,
                            shape,
                            data: head.to_vec(),
                        }
                    })
                    .collect();
                ModelDoc::Lstm(LstmDoc {
                    hidden: m.hidden(),
                    seed: m.seed,
                    scaler: m.scaler.clone(),
                    tensors,
                })
            }
            Model::Gbdt(m) => ModelDoc::Gbdt(GbdtDoc {
                eta: m.config.eta,
                lambda: m.config.lambda,
                gamma: m.config.gamma,
                max_depth: m.config.max_depth,
                min_points: m.config.min_points,
                base_score: m.base_score,
                trees: m
                    .rounds
                    .iter()
                    .flat_map(|r| r.iter().map(TreeNode::to_preorder))
                    .collect(),
            }),
        }
    }

    fn into_model(self) -> Result<Model> {
        match self {
            ModelDoc::Hmc(m) => {
                m.validate()?;
                Ok(Model::Hmc(m))
            }
            ModelDoc::Lstm(doc) => {
                let specs = lstm_tensor_specs(doc.hidden);
                if doc.tensors.len() != specs.len() {
                    return Err(Error::Format(format!(
                        "expected {} LSTM tensors, found {}",
                        specs.len(),
                        doc.tensors.len()
                    )));
                }
                let mut params = Vec::with_capacity(Layout { hidden: doc.hidden }.len());
                for (t, (name, shape)) in doc.tensors.into_iter().zip(specs) {
                    if t.name != name || t.shape != shape {
                        return Err(Error::Format(format!(
                            "expected tensor {name} {shape:?}, found {} {:?}",
                            t.name, t.shape
                        )));
                    }
                    if t.data.len() != shape.iter().product::<usize>() {
                        return Err(Error::Format(format!(
                            "tensor {name} holds {} values for shape {shape:?}",
                            t.data.len()
                        )));
                    }
                    params.extend(t.data);
                }
                Ok(Model::Lstm(LstmModel::from_params(
                    doc.hidden, params, doc.scaler, doc.seed,
                )?))
            }
            ModelDoc::Gbdt(doc) => {
                if doc.trees.len() % NUM_CLASSES != 0 {
                    return Err(Error::Format(format!(
                        "{} trees is not a multiple of {NUM_CLASSES}",
                        doc.trees.len()
                    )));
                }
                let config = GbdtConfig {
                    rounds: doc.trees.len() / NUM_CLASSES,
                    eta: doc.eta,
                    lambda: doc.lambda,
                    gamma: doc.gamma,
                    max_depth: doc.max_depth,
                    min_points: doc.min_points,
                };
                config.validate().map_err(|e| Error::Format(e.to_string()))?;
                let mut rounds = Vec::with_capacity(config.rounds);
                for chunk in doc.trees.chunks(NUM_CLASSES) {
                    let trees: Vec<TreeNode> = chunk
                        .iter()
                        .map(|r| TreeNode::from_preorder(r))
                        .collect::<Result<_>>()?;
                    rounds.push(trees.try_into().expect("chunk of NUM_CLASSES trees"));
                }
                Ok(Model::Gbdt(GbdtModel {
                    config,
                    base_score: doc.base_score,
                    rounds,
                }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbdt::{train_gbdt, GbdtConfig};
    use crate::hmc::{train_hmc, HmcConfig};
    use crate::lstm::{train_lstm, LstmConfig};
    use crate::optim::LogisticConfig;
    use crate::sensor::{FeatureSequence, FeatureSet, FeatureVector, PollutantLabel};

    fn toy_set() -> FeatureSet {
        let mut seqs = Vec::new();
        for (k, label) in PollutantLabel::ALL.into_iter().enumerate() {
            let features = (0..6)
                .map(|t| FeatureVector(std::array::from_fn(|j| 1.0 + k as f64 + 0.01 * (t + j) as f64)))
                .collect();
            seqs.push(FeatureSequence {
                session_id: format!("s{k}"),
                features,
                labels: vec![label; 6],
            });
        }
        FeatureSet::new(seqs)
    }

    fn roundtrip(model: Model) {
        let text = model.to_json().unwrap();
        let back = Model::from_json(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn hmc_roundtrip() {
        let cfg = HmcConfig {
            emission: LogisticConfig {
                iterations: 50,
                learning_rate: 0.01,
            },
            ..HmcConfig::default()
        };
        let (m, _) = train_hmc(&toy_set(), &cfg).unwrap();
        roundtrip(Model::Hmc(m));
    }

    #[test]
    fn lstm_roundtrip_and_shapes() {
        let cfg = LstmConfig {
            hidden: 5,
            iterations: 3,
            ..LstmConfig::default()
        };
        let (m, _) = train_lstm(&toy_set(), &cfg).unwrap();
        let text = Model::Lstm(m.clone()).to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let tensors = v["model"]["tensors"].as_array().unwrap();
        assert_eq!(tensors.len(), 14);
        assert_eq!(tensors[0]["name"], "W_f");
        assert_eq!(tensors[0]["shape"], serde_json::json!([5, 10]));
        assert_eq!(tensors[4]["shape"], serde_json::json!([5, 5]));
        assert_eq!(tensors[12]["shape"], serde_json::json!([4, 5]));
        roundtrip(Model::Lstm(m));
    }

    #[test]
    fn gbdt_roundtrip_and_tree_count() {
        let cfg = GbdtConfig {
            rounds: 7,
            ..GbdtConfig::default()
        };
        let (m, _) = train_gbdt(&toy_set(), &cfg).unwrap();
        let text = Model::Gbdt(m.clone()).to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["model"]["trees"].as_array().unwrap().len(), 28);
        roundtrip(Model::Gbdt(m));
    }

    #[test]
    fn rejects_foreign_fingerprint() {
        let (m, _) = train_gbdt(&toy_set(), &GbdtConfig { rounds: 1, ..Default::default() }).unwrap();
        let text = Model::Gbdt(m).to_json().unwrap();
        let tampered = text.replace("pm-ratios-v1:", "pm-ratios-v0:");
        let err = Model::from_json(&tampered).unwrap_err();
        assert!(matches!(err, Error::Format(ref s) if s.contains("fingerprint")), "{err}");
    }

    #[test]
    fn rejects_other_schema_version() {
        let (m, _) = train_gbdt(&toy_set(), &GbdtConfig { rounds: 1, ..Default::default() }).unwrap();
        let text = Model::Gbdt(m)
            .to_json()
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(Model::from_json(&text).is_err());
    }

    #[test]
    fn rejects_non_stochastic_transitions() {
        let cfg = HmcConfig {
            emission: LogisticConfig {
                iterations: 5,
                learning_rate: 0.01,
            },
            ..HmcConfig::default()
        };
        let (mut m, _) = train_hmc(&toy_set(), &cfg).unwrap();
        m.transition[0][0] += 0.5;
        let text = Model::Hmc(m).to_json().unwrap();
        assert!(matches!(Model::from_json(&text), Err(Error::Format(_))));
    }
}
