//! Confusion-based metrics, the one-tailed paired t-test, 2D/3D fusion and
//! majority-vote label projection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::io::read_labels;
use crate::data::palette::ClassPalette;
use crate::data::types::{ClassId, LabelGrid, ProbMap};
use crate::error::{Error, Result};

/// Rows are ground truth, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::DimensionMismatch { expected: classes * classes, actual: counts.len() });
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    /// Accumulates `(truth, prediction)` pairs, skipping masked elements.
    pub fn from_labels(classes: usize, truth: &[ClassId], pred: &[ClassId], ignore: Option<&[bool]>) -> Result<Self> {
        let mut cm = ConfusionMatrix::new(classes);
        cm.add_labels(truth, pred, ignore)?;
        Ok(cm)
    }

    pub fn add_labels(&mut self, truth: &[ClassId], pred: &[ClassId], ignore: Option<&[bool]>) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::DimensionMismatch { expected: truth.len(), actual: pred.len() });
        }
        for (i, (&t, &p)) in truth.iter().zip(pred).enumerate() {
            if ignore.is_some_and(|m| m[i]) {
                continue;
            }
            let (t, p) = (t as usize, p as usize);
            if t >= self.classes || p >= self.classes {
                return Err(Error::InvalidData(format!("label pair ({t}, {p}) outside {} classes", self.classes)));
            }
            self.counts[t * self.classes + p] += 1;
        }
        Ok(())
    }

    pub fn add_grid(&mut self, truth: &LabelGrid, pred: &[ClassId]) -> Result<()> {
        self.add_labels(&truth.labels, pred, truth.ignore.as_deref())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::DimensionMismatch { expected: self.classes, actual: other.classes });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub overall: f64,
    pub average: f64,
    pub iou: f64,
    /// `None` for classes without ground-truth elements.
    pub class_accuracy: Vec<Option<f64>>,
    /// `None` for classes absent from both ground truth and prediction.
    pub class_iou: Vec<Option<f64>>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let trace: u64 = (0..cm.classes).map(|c| cm.get(c, c)).sum();
    let mut class_accuracy = Vec::with_capacity(cm.classes);
    let mut class_iou = Vec::with_capacity(cm.classes);
    for c in 0..cm.classes {
        let tp = cm.get(c, c) as f64;
        let row = cm.row_sum(c) as f64;
        let col = cm.col_sum(c) as f64;
        class_accuracy.push((row > 0.0).then(|| tp / row));
        let union = row + col - tp;
        class_iou.push((union > 0.0).then(|| tp / union));
    }
    let mean = |v: &[Option<f64>]| {
        let present: Vec<f64> = v.iter().flatten().copied().collect();
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(Metrics {
        overall: trace as f64 / total as f64,
        average: mean(&class_accuracy),
        iou: mean(&class_iou),
        class_accuracy,
        class_iou,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TTest {
    /// `+∞`/`−∞` when every difference is the same non-zero value.
    pub t: f64,
    /// One-tailed p-value for mean(a − b) > 0.
    pub p: f64,
    pub dof: usize,
    pub significant: bool,
}

pub const SIGNIFICANCE: f64 = 0.01;

/// Upper tail `P(T > t)` of Student's t with `dof` degrees of freedom.
pub fn student_t_sf(t: f64, dof: f64) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::InvalidData(e.to_string()))?;
    Ok(dist.sf(t))
}

/// Paired t-test on `d = a − b` with `n − 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidData("paired t-test needs at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateDifferences);
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let dof = n - 1;
    if var == 0.0 {
        let t = if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
        let p = if mean > 0.0 { 0.0 } else { 1.0 };
        return Ok(TTest { t, p, dof, significant: p < SIGNIFICANCE });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let p = student_t_sf(t, dof as f64)?;
    Ok(TTest { t, p, dof, significant: p < SIGNIFICANCE })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FusionMode {
    #[default]
    Mean,
    /// Elementwise product, renormalised (uniform if the product vanishes).
    Product,
}

/// Combines projected image distributions with point distributions. Points
/// without image coverage keep their point distribution.
pub fn fuse_modalities(p2d: &ProbMap, p3d: &ProbMap, coverage: Option<&[bool]>, mode: FusionMode) -> Result<ProbMap> {
    if p2d.len() != p3d.len() || p2d.classes() != p3d.classes() {
        return Err(Error::ShapeMismatch(format!(
            "cannot fuse {}x{} with {}x{}",
            p2d.len(),
            p2d.classes(),
            p3d.len(),
            p3d.classes()
        )));
    }
    if let Some(c) = coverage {
        if c.len() != p3d.len() {
            return Err(Error::DimensionMismatch { expected: p3d.len(), actual: c.len() });
        }
    }
    let k = p3d.classes();
    let mut out = Vec::with_capacity(p3d.len() * k);
    let mut buf = vec![0.0; k];
    for i in 0..p3d.len() {
        let (a, b) = (p2d.row(i), p3d.row(i));
        if coverage.is_some_and(|c| !c[i]) {
            out.extend_from_slice(b);
            continue;
        }
        for c in 0..k {
            buf[c] = match mode {
                FusionMode::Mean => 0.5 * (a[c] + b[c]),
                FusionMode::Product => a[c] * b[c],
            };
        }
        let z: f64 = buf.iter().sum();
        if z > 0.0 {
            out.extend(buf.iter().map(|v| v / z));
        } else {
            out.extend(std::iter::repeat_n(1.0 / k as f64, k));
        }
    }
    ProbMap::new(p3d.geometry(), k, out)
}

pub const UNLABELED: ClassId = ClassId::MAX;

/// Most frequent source label per target (lowest class on ties, [`UNLABELED`] if no members).
pub fn project_majority(labels: &[ClassId], membership: &[Vec<usize>]) -> Result<Vec<ClassId>> {
    let mut out = Vec::with_capacity(membership.len());
    let mut votes: BTreeMap<ClassId, usize> = BTreeMap::new();
    for (t, members) in membership.iter().enumerate() {
        votes.clear();
        for &m in members {
            let l = *labels
                .get(m)
                .ok_or_else(|| Error::InvalidData(format!("target {t} references missing source {m}")))?;
            *votes.entry(l).or_default() += 1;
        }
        let best = votes.iter().fold(None, |acc: Option<(ClassId, usize)>, (&l, &n)| match acc {
            Some((_, bn)) if bn >= n => acc,
            _ => Some((l, n)),
        });
        out.push(best.map_or(UNLABELED, |(l, _)| l));
    }
    Ok(out)
}

/// Parses `target source source ...` lines into per-target member lists.
/// Targets must be `0..n` with no gaps or repeats; `#` starts a comment.
pub fn parse_correspondences(text: &str) -> Result<Vec<Vec<usize>>> {
    let mut by_target: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut ids = line.split_whitespace().map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::format("correspondence file", format!("line {}: bad id {s:?}", ln + 1)))
        });
        let target = ids.next().expect("non-empty line")?;
        let members = ids.collect::<Result<Vec<_>>>()?;
        if by_target.insert(target, members).is_some() {
            return Err(Error::format("correspondence file", format!("line {}: target {target} repeated", ln + 1)));
        }
    }
    let n = by_target.len();
    if by_target.keys().last().is_some_and(|&k| k + 1 != n) {
        return Err(Error::format("correspondence file", "targets must be numbered 0..n without gaps"));
    }
    Ok(by_target.into_values().collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItemReport {
    pub name: String,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub items: Vec<ItemReport>,
    pub confusion: ConfusionMatrix,
    pub aggregate: Metrics,
    pub class_names: Vec<String>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| format!("{x:.6}"))
}

impl RunReport {
    pub fn from_items(items: Vec<(String, ConfusionMatrix)>, class_names: Vec<String>) -> Result<Self> {
        let mut confusion = ConfusionMatrix::new(class_names.len());
        let mut reports = Vec::with_capacity(items.len());
        for (name, cm) in items {
            confusion.merge(&cm)?;
            reports.push(ItemReport { name, metrics: metrics(&cm)? });
        }
        let aggregate = metrics(&confusion)?;
        Ok(RunReport { items: reports, confusion, aggregate, class_names })
    }

    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let a = &self.aggregate;
        let _ = writeln!(s, "items={}", self.items.len());
        let _ = writeln!(s, "elements={}", self.confusion.total());
        let _ = writeln!(s, "overall={:.6}", a.overall);
        let _ = writeln!(s, "average={:.6}", a.average);
        let _ = writeln!(s, "iou={:.6}", a.iou);
        for (c, name) in self.class_names.iter().enumerate() {
            let _ = writeln!(s, "class.{name}.accuracy={}", fmt_opt(a.class_accuracy[c]));
            let _ = writeln!(s, "class.{name}.iou={}", fmt_opt(a.class_iou[c]));
        }
        for item in &self.items {
            let m = &item.metrics;
            let _ = writeln!(
                s,
                "item.{}.overall={:.6}\nitem.{}.average={:.6}\nitem.{}.iou={:.6}",
                item.name, m.overall, item.name, m.average, item.name, m.iou
            );
        }
        s
    }

    /// Aligned per-class table followed by the aggregate line.
    pub fn to_table(&self) -> String {
        let width = self.class_names.iter().map(String::len).max().unwrap_or(5).max(7);
        let mut s = format!("{:<width$}  {:>8}  {:>8}\n", "class", "accuracy", "iou");
        for (c, name) in self.class_names.iter().enumerate() {
            let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x));
            let a = &self.aggregate;
            let _ = writeln!(s, "{name:<width$}  {:>8}  {:>8}", pct(a.class_accuracy[c]), pct(a.class_iou[c]));
        }
        let a = &self.aggregate;
        let _ = writeln!(
            s,
            "{:<width$}  overall {:.2}  average {:.2}  iou {:.2}",
            "total",
            100.0 * a.overall,
            100.0 * a.average,
            100.0 * a.iou
        );
        s
    }
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Compares every prediction PNG with the ground-truth PNG of the same stem.
pub fn evaluate_run(pred_dir: &Path, truth_dir: &Path, palette: &ClassPalette) -> Result<RunReport> {
    let preds = png_stems(pred_dir)?;
    let truths = png_stems(truth_dir)?;
    for stem in truths.keys() {
        if !preds.contains_key(stem) {
            return Err(Error::MissingPair(format!("{stem}: no prediction in {}", pred_dir.display())));
        }
    }
    let mut items = Vec::with_capacity(preds.len());
    for (stem, pred_path) in &preds {
        let truth_path = truths
            .get(stem)
            .ok_or_else(|| Error::MissingPair(format!("{stem}: no ground truth in {}", truth_dir.display())))?;
        let pred = read_labels(pred_path, palette)?;
        let truth = read_labels(truth_path, palette)?;
        if (pred.width, pred.height) != (truth.width, truth.height) {
            return Err(Error::MissingPair(format!(
                "{} is {}x{} but {} is {}x{}",
                pred_path.display(),
                pred.width,
                pred.height,
                truth_path.display(),
                truth.width,
                truth.height
            )));
        }
        let mut cm = ConfusionMatrix::new(palette.classes());
        cm.add_grid(&truth, &pred.labels)?;
        items.push((stem.clone(), cm));
    }
    RunReport::from_items(items, palette.entries().iter().map(|e| e.name.clone()).collect())
}
