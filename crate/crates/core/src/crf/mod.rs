//! Potts-model CRF smoothing of per-element class distributions.
//!
//! Energy: `Σ_i −ln max(P_i(l_i), 1e-9) + λ Σ_(i,j) w_ij [l_i ≠ l_j]`, minimised
//! by alpha-expansion over an 8-connected pixel grid or a symmetrised k-NN
//! point graph.

pub mod maxflow;

pub use maxflow::{FlowGraph, Segment};

use std::collections::BTreeSet;

use crate::data::types::{argmax, ClassId, PointCloud, ProbMap};
use crate::error::{Error, Result};
use crate::features3d::KdTree;

pub const PROB_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphKind {
    Grid { width: usize, height: usize },
    Knn { k: usize },
    Custom,
}

/// Undirected weighted graph; each pair appears once with `i < j`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    pub nodes: usize,
    pub edges: Vec<(u32, u32, f64)>,
    pub kind: GraphKind,
}

impl NeighborGraph {
    pub fn new(nodes: usize, edges: Vec<(u32, u32, f64)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &(i, j, w) in &edges {
            if i == j || i as usize >= nodes || j as usize >= nodes {
                return Err(Error::InvalidData(format!("bad edge ({i}, {j})")));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidData(format!("edge ({i}, {j}) has weight {w}")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::InvalidData(format!("duplicate edge ({i}, {j})")));
            }
        }
        Ok(NeighborGraph { nodes, edges, kind: GraphKind::Custom })
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes];
        for &(i, j, _) in &self.edges {
            d[i as usize] += 1;
            d[j as usize] += 1;
        }
        d
    }
}

/// 8-connected grid: E and S edges weigh 1, SE and SW edges `1/√2`.
pub fn build_grid_graph(width: usize, height: usize) -> NeighborGraph {
    let diag = std::f64::consts::FRAC_1_SQRT_2;
    let mut edges = Vec::with_capacity(4 * width * height);
    let id = |x: usize, y: usize| (y * width + x) as u32;
    for y in 0..height {
        for x in 0..width {
            if x + 1 < width {
                edges.push((id(x, y), id(x + 1, y), 1.0));
            }
            if y + 1 < height {
                if x + 1 < width {
                    edges.push((id(x, y), id(x + 1, y + 1), diag));
                }
                edges.push((id(x, y), id(x, y + 1), 1.0));
                if x > 0 {
                    edges.push((id(x, y), id(x - 1, y + 1), diag));
                }
            }
        }
    }
    NeighborGraph { nodes: width * height, edges, kind: GraphKind::Grid { width, height } }
}

/// Unit-weight edge `{i, j}` whenever either point is among the other's `k` nearest neighbours.
pub fn build_knn_graph(cloud: &PointCloud, k: usize) -> Result<NeighborGraph> {
    let n = cloud.len();
    if n <= k {
        return Err(Error::TooFewPoints { n, k });
    }
    let tree = KdTree::build(&cloud.points);
    let mut set = BTreeSet::new();
    for (i, p) in cloud.points.iter().enumerate() {
        for (_, j) in tree.knn(p, k + 1).into_iter().filter(|&(_, j)| j != i).take(k) {
            set.insert((i.min(j) as u32, i.max(j) as u32));
        }
    }
    let edges = set.into_iter().map(|(i, j)| (i, j, 1.0)).collect();
    Ok(NeighborGraph { nodes: n, edges, kind: GraphKind::Knn { k } })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModel {
    /// `n × C`, row-major.
    pub unaries: Vec<f64>,
    pub classes: usize,
    pub lambda: f64,
    pub graph: NeighborGraph,
}

impl EnergyModel {
    pub fn from_probs(p: &ProbMap, graph: NeighborGraph, lambda: f64) -> Result<Self> {
        if p.len() != graph.nodes {
            return Err(Error::DimensionMismatch { expected: graph.nodes, actual: p.len() });
        }
        let unaries = p.as_slice().iter().map(|&v| -v.max(PROB_FLOOR).ln()).collect();
        EnergyModel::new(unaries, p.classes(), lambda, graph)
    }

    pub fn new(unaries: Vec<f64>, classes: usize, lambda: f64, graph: NeighborGraph) -> Result<Self> {
        if unaries.len() != graph.nodes * classes {
            return Err(Error::DimensionMismatch { expected: graph.nodes * classes, actual: unaries.len() });
        }
        if !(lambda >= 0.0 && lambda.is_finite()) || unaries.iter().any(|u| !u.is_finite()) {
            return Err(Error::InvalidData("energy terms must be finite and lambda non-negative".into()));
        }
        Ok(EnergyModel { unaries, classes, lambda, graph })
    }

    #[inline]
    pub fn unary(&self, i: usize, l: usize) -> f64 {
        self.unaries[i * self.classes + l]
    }

    pub fn energy(&self, labels: &[ClassId]) -> f64 {
        let u: f64 = labels.iter().enumerate().map(|(i, &l)| self.unary(i, l as usize)).sum();
        let pair: f64 = self
            .graph
            .edges
            .iter()
            .filter(|&&(i, j, _)| labels[i as usize] != labels[j as usize])
            .map(|&(_, _, w)| w)
            .sum();
        u + self.lambda * pair
    }

    /// Per-element minimiser of the unaries (lowest class on ties).
    pub fn unary_argmin(&self) -> Vec<ClassId> {
        self.unaries.chunks_exact(self.classes).map(|r| argmax(&r.iter().map(|u| -u).collect::<Vec<_>>())).collect()
    }
}

/// Optimal labeling among `{keep current, switch to alpha}` moves, via one min cut.
pub fn expansion_move(model: &EnergyModel, labels: &[ClassId], alpha: ClassId) -> Vec<ClassId> {
    let n = labels.len();
    let a = alpha as usize;
    let mut g = FlowGraph::new(n);
    // Linear cost of x_i = 1 (switch) relative to x_i = 0 (keep).
    let mut lin: Vec<f64> = (0..n).map(|i| model.unary(i, a) - model.unary(i, labels[i] as usize)).collect();
    let potts = |p: ClassId, q: ClassId, w: f64| if p != q { model.lambda * w } else { 0.0 };
    for &(i, j, w) in &model.graph.edges {
        let (i, j) = (i as usize, j as usize);
        let (li, lj) = (labels[i], labels[j]);
        let e00 = potts(li, lj, w);
        let e01 = potts(li, alpha, w);
        let e10 = potts(alpha, lj, w);
        lin[i] += e10 - e00;
        lin[j] -= e10;
        // e11 = 0; the remainder is paid when i keeps and j switches.
        let c = e01 + e10 - e00;
        if c > 0.0 {
            g.add_edge(i, j, c, 0.0);
        }
    }
    // Sink side means "switch": it cuts the source arc, so the switching cost goes there.
    for (i, &d) in lin.iter().enumerate() {
        if d > 0.0 {
            g.add_tweights(i, d, 0.0);
        } else if d < 0.0 {
            g.add_tweights(i, 0.0, -d);
        }
    }
    g.maxflow();
    (0..n).map(|i| if g.segment(i) == Segment::Sink { alpha } else { labels[i] }).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionResult {
    pub labels: Vec<ClassId>,
    pub initial_energy: f64,
    pub energy: f64,
    /// Energy after each accepted move.
    pub trace: Vec<f64>,
    pub cycles: usize,
}

/// Cycles α = 0..C until a full cycle accepts no move. Moves are accepted
/// only if they strictly lower the energy.
pub fn alpha_expansion(model: &EnergyModel, init: &[ClassId]) -> Result<ExpansionResult> {
    if init.len() != model.graph.nodes {
        return Err(Error::DimensionMismatch { expected: model.graph.nodes, actual: init.len() });
    }
    if let Some(&l) = init.iter().find(|&&l| l as usize >= model.classes) {
        return Err(Error::InvalidData(format!("initial label {l} out of range")));
    }
    let mut labels = init.to_vec();
    let initial_energy = model.energy(&labels);
    let mut energy = initial_energy;
    let mut trace = Vec::new();
    let mut cycles = 0;
    loop {
        cycles += 1;
        let mut moved = false;
        for alpha in 0..model.classes as ClassId {
            let proposal = expansion_move(model, &labels, alpha);
            let e = model.energy(&proposal);
            if e < energy {
                labels = proposal;
                energy = e;
                trace.push(e);
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    Ok(ExpansionResult { labels, initial_energy, energy, trace, cycles })
}

/// Smooths `p` with weight `lambda`, starting from its MAP labeling.
pub fn smooth(p: &ProbMap, graph: &NeighborGraph, lambda: f64) -> Result<ExpansionResult> {
    let model = EnergyModel::from_probs(p, graph.clone(), lambda)?;
    alpha_expansion(&model, &p.map_labels())
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count).map(|k| 10f64.powf(a + (b - a) * k as f64 / (count - 1) as f64)).collect()
}

pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(0.01, 100.0, 15)
}

/// One training item for λ selection: stage output, its graph, ground truth and ignore mask.
pub struct TuneItem<'a> {
    pub probs: &'a ProbMap,
    pub graph: &'a NeighborGraph,
    pub truth: &'a [ClassId],
    pub ignore: Option<&'a [bool]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaChoice {
    pub lambda: f64,
    pub accuracy: f64,
    /// `(λ, overall accuracy)` for every grid value.
    pub curve: Vec<(f64, f64)>,
}

/// The λ with the best overall accuracy of the smoothed labelings; ties go to the smaller λ.
pub fn tune_lambda(items: &[TuneItem], grid: &[f64]) -> Result<LambdaChoice> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("lambda grid is empty".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut curve = Vec::with_capacity(sorted.len());
    for &lambda in &sorted {
        let (mut hit, mut total) = (0usize, 0usize);
        for item in items {
            let out = smooth(item.probs, item.graph, lambda)?;
            for (i, (&l, &t)) in out.labels.iter().zip(item.truth).enumerate() {
                if item.ignore.is_some_and(|m| m[i]) {
                    continue;
                }
                total += 1;
                hit += (l == t) as usize;
            }
        }
        curve.push((lambda, if total == 0 { 0.0 } else { hit as f64 / total as f64 }));
    }
    let mut best = curve[0];
    for &c in &curve[1..] {
        if c.1 > best.1 {
            best = c;
        }
    }
    Ok(LambdaChoice { lambda: best.0, accuracy: best.1, curve })
}
