//! Boosting loop and histogram-based tree growth.
//!
//! Gradient and hessian histograms are accumulated in 64-bit fixed point, so
//! node statistics (and therefore split gains, tie-breaks and leaf values) are
//! exact integer sums that do not depend on sample order or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::binning::FeatureBins;
use super::{DecisionTree, GbdtConfig, Node, TreeEnsemble};
use crate::data::types::{ClassId, FeatureMatrix};
use crate::error::{Error, Result};

/// Diagnostics from one training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mean weighted cross-entropy before training and after every accepted round.
    pub losses: Vec<f64>,
    pub rounds_used: usize,
    pub early_stopped: bool,
    /// Classes without training mass; they keep the uniform prior score.
    pub empty_classes: Vec<usize>,
    pub warnings: Vec<String>,
}

const LOSS_SCALE: f64 = (1u64 << 40) as f64;
const MIN_GAIN: f64 = 1e-12;
const MAX_STEP_HALVINGS: usize = 10;

/// Trains a softmax gradient-boosted ensemble on `features` (one row per
/// training element) with optional per-element weights.
pub fn train_ensemble(
    features: &FeatureMatrix,
    labels: &[ClassId],
    weights: Option<&[f64]>,
    classes: usize,
    cfg: &GbdtConfig,
) -> Result<(TreeEnsemble, TrainLog)> {
    cfg.validate()?;
    let n = features.len();
    let dim = features.dim();
    if labels.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: labels.len() });
    }
    if classes == 0 || n < classes {
        return Err(Error::InvalidData(format!("need at least {classes} training elements, got {n}")));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::InvalidData(format!("label {l} is not < {classes}")));
    }
    let mut w: Vec<f64> = match weights {
        Some(ws) => {
            if ws.len() != n {
                return Err(Error::DimensionMismatch { expected: n, actual: ws.len() });
            }
            if ws.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidData("weights must be finite and non-negative".into()));
            }
            ws.to_vec()
        }
        None => vec![1.0; n],
    };

    let mut mass = vec![0.0; classes];
    let mut counts = vec![0usize; classes];
    for (i, &l) in labels.iter().enumerate() {
        mass[l as usize] += w[i];
        counts[l as usize] += 1;
    }
    let mut log = TrainLog::default();
    for c in 0..classes {
        if mass[c] <= 0.0 {
            log.empty_classes.push(c);
            log.warnings.push(format!("class {c} has no training mass; it keeps the uniform prior score"));
        }
    }
    if cfg.class_balanced {
        let present = counts.iter().filter(|&&k| k > 0).count() as f64;
        for (i, &l) in labels.iter().enumerate() {
            w[i] *= n as f64 / (present * counts[l as usize] as f64);
        }
    }
    let total_weight = fixed_sum(w.iter().copied());
    if total_weight <= 0.0 {
        return Err(Error::InvalidData("total training weight is zero".into()));
    }

    let bins = FeatureBins::build(features.as_slice(), n, dim, cfg.bins);
    let nbins: Vec<usize> = bins.cuts.iter().map(|c| c.len() + 1).collect();

    // Fixed-point scale: |g·w| <= max_w and sums over n elements must stay below 2^62.
    let max_w = w.iter().copied().fold(0.0, f64::max);
    let bound = (n as f64 * max_w).max(1.0);
    let exp = (61 - bound.log2().ceil() as i32).min(40);
    let scale = 2f64.powi(exp);

    let mut scores = vec![0.0; n * classes];
    let mut probs = vec![0.0; n * classes];
    softmax_rows(&scores, &mut probs, classes);
    let mut loss = mean_loss(&scores, labels, &w, classes, total_weight);
    log.losses.push(loss);

    let grower = TreeGrower { bins: &bins, nbins: &nbins, cfg, scale };
    let mut trees: Vec<DecisionTree> = Vec::new();
    let mut gq = vec![0i64; n];
    let mut hq = vec![0i64; n];
    let mut stall = 0usize;
    let all: Vec<u32> = (0..n as u32).collect();

    for round in 0..cfg.rounds {
        let active: Vec<u32> = if cfg.subsample < 1.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add((round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
            let picked: Vec<u32> = all.iter().copied().filter(|_| rng.gen::<f64>() < cfg.subsample).collect();
            if picked.is_empty() { all.clone() } else { picked }
        } else {
            all.clone()
        };

        // One tree per non-empty class, all fitted against this round's probabilities.
        let mut round_trees: Vec<(usize, GrownTree)> = Vec::with_capacity(classes);
        for k in 0..classes {
            if mass[k] <= 0.0 {
                continue;
            }
            for &i in &active {
                let i = i as usize;
                let p = probs[i * classes + k];
                let y = if labels[i] as usize == k { 1.0 } else { 0.0 };
                gq[i] = ((p - y) * w[i] * scale).round() as i64;
                hq[i] = ((p * (1.0 - p)).max(1e-12) * w[i] * scale).round() as i64;
            }
            round_trees.push((k, grower.grow(&active, &gq, &hq)));
        }

        // Per-element score deltas for the full round.
        let mut delta = vec![0.0; n * classes];
        for (k, tree) in &round_trees {
            for i in 0..n {
                delta[i * classes + k] = tree.value_for(&bins, i);
            }
        }

        let mut step = 1.0;
        let mut accepted = None;
        let mut trial = vec![0.0; n * classes];
        for _ in 0..=MAX_STEP_HALVINGS {
            for ((t, s), d) in trial.iter_mut().zip(&scores).zip(&delta) {
                *t = s + step * d;
            }
            let new_loss = mean_loss(&trial, labels, &w, classes, total_weight);
            if new_loss <= loss {
                accepted = Some(new_loss);
                break;
            }
            step *= 0.5;
        }
        let Some(new_loss) = accepted else {
            log.warnings.push(format!("round {round}: no loss-decreasing step, stopping"));
            log.early_stopped = true;
            break;
        };

        std::mem::swap(&mut scores, &mut trial);
        softmax_rows(&scores, &mut probs, classes);
        for (k, tree) in round_trees {
            trees.push(tree.into_decision_tree(&bins, k, classes, step));
        }
        log.rounds_used += 1;
        log.losses.push(new_loss);

        if loss - new_loss < cfg.early_stop_tolerance {
            stall += 1;
        } else {
            stall = 0;
        }
        loss = new_loss;
        if cfg.early_stop_rounds > 0 && stall >= cfg.early_stop_rounds {
            log.early_stopped = true;
            break;
        }
    }

    let ensemble = TreeEnsemble::new(classes, dim, cfg.shrinkage, log.rounds_used, trees)?;
    Ok((ensemble, log))
}

fn softmax_rows(scores: &[f64], probs: &mut [f64], classes: usize) {
    probs.copy_from_slice(scores);
    for row in probs.chunks_exact_mut(classes) {
        super::softmax_in_place(row);
    }
}

/// Order-independent sum via 2^-40 fixed point.
fn fixed_sum(values: impl Iterator<Item = f64>) -> f64 {
    let total: i128 = values.map(|v| (v * LOSS_SCALE).round() as i128).sum();
    total as f64 / LOSS_SCALE
}

fn mean_loss(scores: &[f64], labels: &[ClassId], w: &[f64], classes: usize, total_weight: f64) -> f64 {
    let per_element = scores.chunks_exact(classes).zip(labels).zip(w).map(|((row, &y), &wi)| {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        (lse - row[y as usize]) * wi
    });
    fixed_sum(per_element) / total_weight
}

// ---------------------------------------------------------------------------
// Tree growth
// ---------------------------------------------------------------------------

type Hist = Vec<Vec<(i64, i64)>>;

struct TreeGrower<'a> {
    bins: &'a FeatureBins,
    nbins: &'a [usize],
    cfg: &'a GbdtConfig,
    scale: f64,
}

/// Tree over binned features: split `(feature, cut)` sends bins `<= cut` left.
enum GrownNode {
    Split { feature: usize, cut: usize, left: Box<GrownNode>, right: Box<GrownNode> },
    Leaf(f64),
}

struct GrownTree {
    root: GrownNode,
}

impl GrownTree {
    fn value_for(&self, bins: &FeatureBins, i: usize) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                GrownNode::Split { feature, cut, left, right } => {
                    node = if (bins.column(*feature)[i] as usize) <= *cut { left } else { right };
                }
                GrownNode::Leaf(v) => return *v,
            }
        }
    }

    fn into_decision_tree(self, bins: &FeatureBins, class: usize, classes: usize, step: f64) -> DecisionTree {
        let mut nodes = Vec::new();
        let mut leaves = Vec::new();
        fn emit(
            n: GrownNode,
            bins: &FeatureBins,
            class: usize,
            classes: usize,
            step: f64,
            nodes: &mut Vec<Node>,
            leaves: &mut Vec<f64>,
        ) -> u32 {
            let me = nodes.len();
            match n {
                GrownNode::Leaf(v) => {
                    let k = leaves.len() / classes;
                    let mut row = vec![0.0; classes];
                    row[class] = v * step;
                    leaves.extend(row);
                    nodes.push(Node::Leaf(k as u32));
                }
                GrownNode::Split { feature, cut, left, right } => {
                    nodes.push(Node::Leaf(0)); // placeholder
                    let l = emit(*left, bins, class, classes, step, nodes, leaves);
                    let r = emit(*right, bins, class, classes, step, nodes, leaves);
                    nodes[me] = Node::Split { feature: feature as u32, threshold: bins.cuts[feature][cut], left: l, right: r };
                }
            }
            me as u32
        }
        emit(self.root, bins, class, classes, step, &mut nodes, &mut leaves);
        DecisionTree::from_parts(nodes, leaves, classes).expect("grown tree is well formed")
    }
}

impl TreeGrower<'_> {
    fn grow(&self, idx: &[u32], gq: &[i64], hq: &[i64]) -> GrownTree {
        let hist = self.histogram(idx, gq, hq);
        GrownTree { root: self.grow_node(idx, hist, gq, hq, 0) }
    }

    fn leaf_value(&self, g: i64, h: i64) -> f64 {
        let (g, h) = (g as f64 / self.scale, h as f64 / self.scale);
        let denom = h + self.cfg.l2;
        if denom <= 0.0 {
            0.0
        } else {
            -g / denom * self.cfg.shrinkage
        }
    }

    fn grow_node(&self, idx: &[u32], hist: Hist, gq: &[i64], hq: &[i64], depth: usize) -> GrownNode {
        let (g, h) = hist[0].iter().fold((0i64, 0i64), |(a, b), &(x, y)| (a + x, b + y));
        if depth >= self.cfg.max_depth || idx.len() < 2 {
            return GrownNode::Leaf(self.leaf_value(g, h));
        }
        let Some((feature, cut)) = self.best_split(&hist, g, h) else {
            return GrownNode::Leaf(self.leaf_value(g, h));
        };
        let col = self.bins.column(feature);
        let (left, right): (Vec<u32>, Vec<u32>) = idx.iter().partition(|&&i| (col[i as usize] as usize) <= cut);

        if depth + 1 >= self.cfg.max_depth {
            let leaf = |side: &[u32]| {
                let (g, h) = side.iter().fold((0i64, 0i64), |(a, b), &i| (a + gq[i as usize], b + hq[i as usize]));
                GrownNode::Leaf(self.leaf_value(g, h))
            };
            return GrownNode::Split { feature, cut, left: Box::new(leaf(&left)), right: Box::new(leaf(&right)) };
        }

        // Build the smaller child's histogram and derive the other by subtraction.
        let (small, large_is_left) = if left.len() <= right.len() { (&left, false) } else { (&right, true) };
        let small_hist = self.histogram(small, gq, hq);
        let large_hist: Hist = hist
            .iter()
            .zip(&small_hist)
            .map(|(p, s)| p.iter().zip(s).map(|(&(pg, ph), &(sg, sh))| (pg - sg, ph - sh)).collect())
            .collect();
        let (lh, rh) = if large_is_left { (large_hist, small_hist) } else { (small_hist, large_hist) };
        GrownNode::Split {
            feature,
            cut,
            left: Box::new(self.grow_node(&left, lh, gq, hq, depth + 1)),
            right: Box::new(self.grow_node(&right, rh, gq, hq, depth + 1)),
        }
    }

    fn histogram(&self, idx: &[u32], gq: &[i64], hq: &[i64]) -> Hist {
        (0..self.nbins.len())
            .into_par_iter()
            .map(|f| {
                let mut hist = vec![(0i64, 0i64); self.nbins[f]];
                if self.nbins[f] > 1 {
                    let col = self.bins.column(f);
                    for &i in idx {
                        let i = i as usize;
                        let e = &mut hist[col[i] as usize];
                        e.0 += gq[i];
                        e.1 += hq[i];
                    }
                } else {
                    // Constant feature: only the totals matter.
                    for &i in idx {
                        hist[0].0 += gq[i as usize];
                        hist[0].1 += hq[i as usize];
                    }
                }
                hist
            })
            .collect()
    }

    /// Best `(feature, cut)` by gain; ties go to the lower feature, then the lower cut.
    fn best_split(&self, hist: &Hist, g: i64, h: i64) -> Option<(usize, usize)> {
        let scale = self.scale;
        let l2 = self.cfg.l2;
        let min_h = self.cfg.min_child_hessian;
        let score = |g: i64, h: i64| {
            let (g, h) = (g as f64 / scale, h as f64 / scale);
            g * g / (h + l2).max(f64::MIN_POSITIVE)
        };
        let parent = score(g, h);
        let per_feature: Vec<Option<(f64, usize)>> = hist
            .par_iter()
            .map(|hf| {
                let mut best: Option<(f64, usize)> = None;
                let (mut gl, mut hl) = (0i64, 0i64);
                for cut in 0..hf.len().saturating_sub(1) {
                    gl += hf[cut].0;
                    hl += hf[cut].1;
                    let (gr, hr) = (g - gl, h - hl);
                    if (hl as f64 / scale) < min_h || (hr as f64 / scale) < min_h {
                        continue;
                    }
                    let gain = score(gl, hl) + score(gr, hr) - parent;
                    if gain > MIN_GAIN && best.is_none_or(|(b, _)| gain > b) {
                        best = Some((gain, cut));
                    }
                }
                best
            })
            .collect();
        let mut best: Option<(f64, usize, usize)> = None;
        for (f, cand) in per_feature.into_iter().enumerate() {
            if let Some((gain, cut)) = cand {
                if best.is_none_or(|(b, _, _)| gain > b) {
                    best = Some((gain, f, cut));
                }
            }
        }
        best.map(|(_, f, c)| (f, c))
    }
}
