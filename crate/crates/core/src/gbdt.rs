//! Gradient-boosted decision trees for softmax multiclass classification.
//!
//! Each round fits one regression tree per class to the first and second
//! derivatives of the cross-entropy at the current logits, then adds
//! `eta * tree(x)` to that class's logit. Trees are grown greedily with the
//! regularized second-order objective: a leaf holding gradient sum `G` and
//! hessian sum `H` takes weight `-G / (H + lambda)`, and a split is kept
//! when
//!
//! ```text
//! gain = 1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] - gamma > 0
//! ```
//!
//! Splits are found by an exhaustive scan of every feature and every
//! midpoint between consecutive distinct values. Ties keep the lowest
//! feature index, then the lowest threshold, so training is deterministic.

use serde::{Deserialize, Serialize};

use crate::classifier::OnlineClassifier;
use crate::error::{Error, Result};
use crate::optim::{softmax, softmax_cross_entropy, TrainingLog};
use crate::sensor::{FeatureSet, FeatureVector, PollutantLabel, NUM_CLASSES, NUM_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub rounds: usize,
    pub eta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub max_depth: usize,
    pub min_points: usize,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            eta: 0.3,
            lambda: 1.0,
            gamma: 0.0,
            max_depth: 6,
            min_points: 1,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Argument(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Argument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Argument(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.min_points == 0 {
            return Err(Error::Argument("min points per leaf must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-point derivatives of the softmax cross-entropy w.r.t. the logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradHess {
    pub grad: [f64; NUM_CLASSES],
    pub hess: [f64; NUM_CLASSES],
}

/// `g = p - onehot(target)`, `h = p (1 - p)`.
pub fn compute_grad_hess(logits: &[f64; NUM_CLASSES], target: PollutantLabel) -> GradHess {
    let p = softmax(logits);
    let mut grad = [0.0; NUM_CLASSES];
    let mut hess = [0.0; NUM_CLASSES];
    for k in 0..NUM_CLASSES {
        grad[k] = p[k];
        hess[k] = p[k] * (1.0 - p[k]);
    }
    grad[target.code()] -= 1.0;
    GradHess { grad, hess }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// Points with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        weight: f64,
    },
}

/// Flat pre-order encoding of a tree, as stored in model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "lowercase")]
pub enum NodeRecord {
    Split { feature: usize, threshold: f64 },
    Leaf { weight: f64 },
}

impl TreeNode {
    pub fn predict(&self, x: &FeatureVector) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { weight } => return *weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    /// Pre-order index (among leaves only) of the leaf that `x` reaches.
    pub fn leaf_index(&self, x: &FeatureVector) -> usize {
        let mut node = self;
        let mut offset = 0;
        loop {
            match node {
                TreeNode::Leaf { .. } => return offset,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if x[*feature] <= *threshold {
                        node = left;
                    } else {
                        offset += left.num_leaves();
                        node = right;
                    }
                }
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.num_leaves() + right.num_leaves(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Leaf weights in pre-order.
    pub fn leaf_weights(&self) -> Vec<f64> {
        self.to_preorder()
            .into_iter()
            .filter_map(|r| match r {
                NodeRecord::Leaf { weight } => Some(weight),
                NodeRecord::Split { .. } => None,
            })
            .collect()
    }

    pub fn to_preorder(&self) -> Vec<NodeRecord> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            match node {
                TreeNode::Leaf { weight } => out.push(NodeRecord::Leaf { weight: *weight }),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    out.push(NodeRecord::Split {
                        feature: *feature,
                        threshold: *threshold,
                    });
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    pub fn from_preorder(records: &[NodeRecord]) -> Result<Self> {
        fn build(records: &[NodeRecord], pos: &mut usize) -> Result<TreeNode> {
            let record = records
                .get(*pos)
                .ok_or_else(|| Error::Format("truncated tree encoding".into()))?;
            *pos += 1;
            match *record {
                NodeRecord::Leaf { weight } => {
                    if !weight.is_finite() {
                        return Err(Error::Format("non-finite leaf weight".into()));
                    }
                    Ok(TreeNode::Leaf { weight })
                }
                NodeRecord::Split { feature, threshold } => {
                    if feature >= NUM_FEATURES || !threshold.is_finite() {
                        return Err(Error::Format(format!(
                            "invalid split on feature {feature} at {threshold}"
                        )));
                    }
                    let left = build(records, pos)?;
                    let right = build(records, pos)?;
                    Ok(TreeNode::Split {
                        feature,
                        threshold,
                        left: Box::new(left),
                        right: Box::new(right),
                    })
                }
            }
        }
        let mut pos = 0;
        let tree = build(records, &mut pos)?;
        if pos != records.len() {
            return Err(Error::Format("trailing records after tree".into()));
        }
        Ok(tree)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    let den = h + lambda;
    if den > 0.0 {
        g * g / den
    } else {
        0.0
    }
}

/// Optimal leaf weight `-G / (H + lambda)`.
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    let den = h + lambda;
    if den > 0.0 {
        -g / den
    } else {
        0.0
    }
}

/// Exhaustive best split of `points` (indices into `features`, `grad`,
/// `hess`). Returns `None` unless some split has strictly positive gain
/// and leaves at least `min_points` on each side.
pub fn best_split(
    points: &[usize],
    features: &[FeatureVector],
    grad: &[f64],
    hess: &[f64],
    lambda: f64,
    gamma: f64,
    min_points: usize,
) -> Option<Split> {
    let n = points.len();
    if n < 2 || n < 2 * min_points {
        return None;
    }
    let g_total: f64 = points.iter().map(|&i| grad[i]).sum();
    let h_total: f64 = points.iter().map(|&i| hess[i]).sum();
    let parent = score(g_total, h_total, lambda);

    let mut best: Option<Split> = None;
    let mut order: Vec<usize> = points.to_vec();
    for feature in 0..NUM_FEATURES {
        order.sort_by(|&a, &b| features[a][feature].total_cmp(&features[b][feature]));
        let mut g_left = 0.0;
        let mut h_left = 0.0;
        for pos in 0..n - 1 {
            let i = order[pos];
            g_left += grad[i];
            h_left += hess[i];
            let here = features[i][feature];
            let next = features[order[pos + 1]][feature];
            if here == next || pos + 1 < min_points || n - pos - 1 < min_points {
                continue;
            }
            let gain = 0.5
                * (score(g_left, h_left, lambda)
                    + score(g_total - g_left, h_total - h_left, lambda)
                    - parent)
                - gamma;
            if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                best = Some(Split {
                    feature,
                    threshold: 0.5 * (here + next),
                    gain,
                });
            }
        }
    }
    best
}

/// Greedy recursive tree on `points`.
pub fn build_tree(
    points: &[usize],
    features: &[FeatureVector],
    grad: &[f64],
    hess: &[f64],
    config: &GbdtConfig,
) -> TreeNode {
    grow(points, features, grad, hess, config, 0)
}

fn grow(
    points: &[usize],
    features: &[FeatureVector],
    grad: &[f64],
    hess: &[f64],
    config: &GbdtConfig,
    depth: usize,
) -> TreeNode {
    let leaf = || {
        let g: f64 = points.iter().map(|&i| grad[i]).sum();
        let h: f64 = points.iter().map(|&i| hess[i]).sum();
        TreeNode::Leaf {
            weight: leaf_weight(g, h, config.lambda),
        }
    };
    if depth >= config.max_depth {
        return leaf();
    }
    let Some(split) = best_split(
        points,
        features,
        grad,
        hess,
        config.lambda,
        config.gamma,
        config.min_points,
    ) else {
        return leaf();
    };
    let (left, right): (Vec<usize>, Vec<usize>) = points
        .iter()
        .partition(|&&i| features[i][split.feature] <= split.threshold);
    TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(grow(&left, features, grad, hess, config, depth + 1)),
        right: Box::new(grow(&right, features, grad, hess, config, depth + 1)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub config: GbdtConfig,
    /// Initial logit of every class.
    pub base_score: f64,
    /// One `[tree; NUM_CLASSES]` per boosting round.
    pub rounds: Vec<[TreeNode; NUM_CLASSES]>,
}

impl GbdtModel {
    pub fn empty(config: GbdtConfig) -> Self {
        Self {
            config,
            base_score: 0.0,
            rounds: Vec::new(),
        }
    }

    pub fn num_trees(&self) -> usize {
        self.rounds.len() * NUM_CLASSES
    }

    pub fn logits(&self, x: &FeatureVector) -> [f64; NUM_CLASSES] {
        let mut z = [self.base_score; NUM_CLASSES];
        for trees in &self.rounds {
            for (k, tree) in trees.iter().enumerate() {
                z[k] += self.config.eta * tree.predict(x);
            }
        }
        z
    }

    pub fn predict_proba(&self, x: &FeatureVector) -> [f64; NUM_CLASSES] {
        let p = softmax(&self.logits(x));
        [p[0], p[1], p[2], p[3]]
    }
}

fn mean_loss(logits: &[[f64; NUM_CLASSES]], labels: &[PollutantLabel]) -> Result<f64> {
    let mut total = 0.0;
    for (z, y) in logits.iter().zip(labels) {
        total += softmax_cross_entropy(z, y.code())?.0;
    }
    Ok(total / labels.len() as f64)
}

/// Boosts `config.rounds` rounds on raw (unscaled) ratio features.
///
/// The log has `rounds + 1` entries: the mean loss before boosting and
/// after each round.
pub fn train_gbdt(train: &FeatureSet, config: &GbdtConfig) -> Result<(GbdtModel, TrainingLog)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let (features, labels): (Vec<FeatureVector>, Vec<PollutantLabel>) =
        train.points().map(|(x, y)| (*x, y)).unzip();
    if features.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite feature vector in training set".into()));
    }
    let n = features.len();
    let points: Vec<usize> = (0..n).collect();
    let mut model = GbdtModel::empty(*config);
    let mut logits = vec![[model.base_score; NUM_CLASSES]; n];
    let mut log = TrainingLog {
        losses: vec![mean_loss(&logits, &labels)?],
    };

    for _ in 0..config.rounds {
        let stats: Vec<GradHess> = logits
            .iter()
            .zip(&labels)
            .map(|(z, &y)| compute_grad_hess(z, y))
            .collect();
        let per_class: Vec<(Vec<f64>, Vec<f64>)> = (0..NUM_CLASSES)
            .map(|k| {
                (
                    stats.iter().map(|s| s.grad[k]).collect(),
                    stats.iter().map(|s| s.hess[k]).collect(),
                )
            })
            .collect();
        // Class trees are independent given the current logits.
        let trees: Vec<TreeNode> = std::thread::scope(|scope| {
            let handles: Vec<_> = per_class
                .iter()
                .map(|(g, h)| scope.spawn(|| build_tree(&points, &features, g, h, config)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("tree builder panicked"))
                .collect()
        });
        let trees: [TreeNode; NUM_CLASSES] = trees
            .try_into()
            .expect("one tree per class");
        for (z, x) in logits.iter_mut().zip(&features) {
            for (k, tree) in trees.iter().enumerate() {
                z[k] += config.eta * tree.predict(x);
            }
        }
        model.rounds.push(trees);
        log.losses.push(mean_loss(&logits, &labels)?);
    }
    Ok((model, log))
}

pub fn predict_sequence(model: &GbdtModel, features: &[FeatureVector]) -> Vec<PollutantLabel> {
    features
        .iter()
        .map(|x| PollutantLabel::argmax(&model.predict_proba(x)))
        .collect()
}

/// Stateless per-frame adapter.
#[derive(Debug, Clone)]
pub struct GbdtStream<'a> {
    model: &'a GbdtModel,
}

impl<'a> GbdtStream<'a> {
    pub fn new(model: &'a GbdtModel) -> Self {
        Self { model }
    }
}

impl OnlineClassifier for GbdtStream<'_> {
    fn reset(&mut self) {}

    fn push(&mut self, x: &FeatureVector) -> Result<[f64; NUM_CLASSES]> {
        if !x.is_finite() {
            return Err(Error::Numeric("non-finite feature vector".into()));
        }
        Ok(self.model.predict_proba(x))
    }
}
