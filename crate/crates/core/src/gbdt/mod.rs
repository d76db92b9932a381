//! Multiclass gradient-boosted decision trees.
//!
//! Each boosting round fits one shallow regression tree per class to the
//! negative gradient of the softmax cross-entropy. Trees store per-class score
//! vectors at their leaves; the ensemble's class distribution is the softmax of
//! the accumulated scores.

mod binning;
mod train;

pub use binning::FeatureBins;
pub use train::{train_ensemble, TrainLog};

use crate::data::types::{FeatureMatrix, ProbMap};
use crate::error::{Error, Result};

/// Boosting hyperparameters. Defaults follow the depth-2, 200-round setup.
#[derive(Clone, Debug, PartialEq)]
pub struct GbdtConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    /// Per-round row subsampling rate in (0, 1].
    pub subsample: f64,
    /// Split candidates per feature (quantile sketch), at most 256.
    pub bins: usize,
    /// L2 penalty on leaf values.
    pub l2: f64,
    pub min_child_hessian: f64,
    pub class_balanced: bool,
    pub early_stop_rounds: usize,
    pub early_stop_tolerance: f64,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            rounds: 200,
            max_depth: 2,
            shrinkage: 0.1,
            subsample: 1.0,
            bins: 256,
            l2: 1.0,
            min_child_hessian: 1e-3,
            class_balanced: false,
            early_stop_rounds: 10,
            early_stop_tolerance: 1e-7,
            seed: 0,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if !(self.shrinkage > 0.0 && self.shrinkage.is_finite()) {
            return bad("shrinkage must be positive");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if !(2..=256).contains(&self.bins) {
            return bad("bins must lie in 2..=256");
        }
        if !(self.l2 >= 0.0 && self.min_child_hessian >= 0.0) {
            return bad("l2 and min_child_hessian must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    /// Go left iff `value < threshold`.
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
    /// Index into the tree's leaf score table.
    Leaf(u32),
}

/// Binary tree with per-class score vectors at the leaves. Node 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    /// `leaves × classes`, row-major.
    leaf_scores: Vec<f64>,
    classes: usize,
}

impl DecisionTree {
    pub fn leaf(scores: Vec<f64>) -> Self {
        let classes = scores.len();
        DecisionTree { nodes: vec![Node::Leaf(0)], leaf_scores: scores, classes }
    }

    /// Depth-1 tree on `feature < threshold`.
    pub fn stump(feature: usize, threshold: f64, left: Vec<f64>, right: Vec<f64>) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::DimensionMismatch { expected: left.len(), actual: right.len() });
        }
        let classes = left.len();
        let mut leaf_scores = left;
        leaf_scores.extend(right);
        Ok(DecisionTree {
            nodes: vec![
                Node::Split { feature: feature as u32, threshold, left: 1, right: 2 },
                Node::Leaf(0),
                Node::Leaf(1),
            ],
            leaf_scores,
            classes,
        })
    }

    /// Validating constructor for deserialised or hand-built trees.
    pub fn from_parts(nodes: Vec<Node>, leaf_scores: Vec<f64>, classes: usize) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidData(format!("decision tree: {m}")));
        if nodes.is_empty() || classes == 0 || leaf_scores.len() % classes != 0 {
            return bad("empty tree or ragged leaf table".into());
        }
        let leaves = leaf_scores.len() / classes;
        for (i, n) in nodes.iter().enumerate() {
            match *n {
                Node::Split { left, right, threshold, .. } => {
                    if left as usize <= i || right as usize <= i || left as usize >= nodes.len() || right as usize >= nodes.len() {
                        return bad(format!("node {i} has invalid children"));
                    }
                    if threshold.is_nan() {
                        return bad(format!("node {i} has a NaN threshold"));
                    }
                }
                Node::Leaf(k) => {
                    if k as usize >= leaves {
                        return bad(format!("node {i} references missing leaf {k}"));
                    }
                }
            }
        }
        Ok(DecisionTree { nodes, leaf_scores, classes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaf_scores(&self) -> &[f64] {
        &self.leaf_scores
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn depth(&self) -> usize {
        fn rec(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + rec(nodes, left as usize).max(rec(nodes, right as usize)),
            }
        }
        rec(&self.nodes, 0)
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature as usize),
                Node::Leaf(_) => None,
            })
            .max()
    }

    #[inline]
    pub fn leaf_for(&self, row: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature as usize] < threshold { left } else { right } as usize;
                }
                Node::Leaf(k) => {
                    let k = k as usize;
                    return &self.leaf_scores[k * self.classes..(k + 1) * self.classes];
                }
            }
        }
    }
}

/// One stage's classifier: trees whose leaf scores already include shrinkage.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeEnsemble {
    classes: usize,
    dim: usize,
    shrinkage: f64,
    rounds: usize,
    trees: Vec<DecisionTree>,
}

impl TreeEnsemble {
    pub fn empty(classes: usize, dim: usize, shrinkage: f64) -> Self {
        TreeEnsemble { classes, dim, shrinkage, rounds: 0, trees: Vec::new() }
    }

    pub fn new(classes: usize, dim: usize, shrinkage: f64, rounds: usize, trees: Vec<DecisionTree>) -> Result<Self> {
        for (t, tree) in trees.iter().enumerate() {
            if tree.classes != classes {
                return Err(Error::InvalidData(format!("tree {t} has {} classes, expected {classes}", tree.classes)));
            }
            if let Some(f) = tree.max_feature() {
                if f >= dim {
                    return Err(Error::InvalidData(format!("tree {t} splits on feature {f} >= {dim}")));
                }
            }
        }
        Ok(TreeEnsemble { classes, dim, shrinkage, rounds, trees })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shrinkage(&self) -> f64 {
        self.shrinkage
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Accumulated raw class scores for one feature row.
    pub fn scores(&self, row: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for tree in &self.trees {
            for (o, s) in out.iter_mut().zip(tree.leaf_for(row)) {
                *o += s;
            }
        }
    }

    pub fn predict_row(&self, row: &[f64], out: &mut [f64]) {
        self.scores(row, out);
        softmax_in_place(out);
    }

    /// Class distributions for every element of `features`.
    pub fn predict_proba(&self, features: &FeatureMatrix) -> Result<ProbMap> {
        if features.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: features.dim() });
        }
        let c = self.classes;
        let mut probs = vec![0.0; features.len() * c];
        for (i, out) in probs.chunks_exact_mut(c).enumerate() {
            self.predict_row(features.row(i), out);
        }
        Ok(ProbMap::from_rows_unchecked(features.geometry(), c, probs))
    }
}

pub fn predict_proba(model: &TreeEnsemble, features: &FeatureMatrix) -> Result<ProbMap> {
    model.predict_proba(features)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    for x in v.iter_mut() {
        *x /= z;
    }
}
