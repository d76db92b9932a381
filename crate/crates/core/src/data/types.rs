//! Grid and point containers shared by every stage of the pipeline.

use crate::error::{Error, Result};

/// Class index. Palettes hold at most a few dozen classes.
pub type ClassId = u16;

/// Where the elements of a [`ProbMap`] or [`FeatureMatrix`] live.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Geometry {
    /// Row-major pixel grid.
    Grid { width: usize, height: usize },
    /// Unordered point set.
    Points(usize),
}

impl Geometry {
    pub fn grid(width: usize, height: usize) -> Self {
        Geometry::Grid { width, height }
    }

    pub fn len(&self) -> usize {
        match *self {
            Geometry::Grid { width, height } => width * height,
            Geometry::Points(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(width, height)` for grids.
    pub fn dims(&self) -> Option<(usize, usize)> {
        match *self {
            Geometry::Grid { width, height } => Some((width, height)),
            Geometry::Points(_) => None,
        }
    }
}

/// Per-element class distributions, `len × classes`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    geometry: Geometry,
    classes: usize,
    probs: Vec<f64>,
}

/// Row-sum tolerance for a valid distribution.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

impl ProbMap {
    /// Validating constructor: every row must be a distribution.
    pub fn new(geometry: Geometry, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidData("probability map needs at least one class".into()));
        }
        if probs.len() != geometry.len() * classes {
            return Err(Error::DimensionMismatch {
                expected: geometry.len() * classes,
                actual: probs.len(),
            });
        }
        for (i, row) in probs.chunks_exact(classes).enumerate() {
            let mut sum = 0.0;
            for &p in row {
                if !(-ROW_SUM_TOLERANCE..=1.0 + ROW_SUM_TOLERANCE).contains(&p) {
                    return Err(Error::InvalidData(format!("element {i}: probability {p} outside [0, 1]")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidData(format!("element {i}: row sums to {sum}")));
            }
        }
        Ok(ProbMap { geometry, classes, probs })
    }

    /// Caller guarantees rows are distributions (softmax output, renormalised means).
    pub(crate) fn from_rows_unchecked(geometry: Geometry, classes: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), geometry.len() * classes);
        ProbMap { geometry, classes, probs }
    }

    pub fn uniform(geometry: Geometry, classes: usize) -> Self {
        let v = 1.0 / classes as f64;
        ProbMap { geometry, classes, probs: vec![v; geometry.len() * classes] }
    }

    pub fn one_hot(geometry: Geometry, classes: usize, labels: &[ClassId]) -> Result<Self> {
        if labels.len() != geometry.len() {
            return Err(Error::DimensionMismatch { expected: geometry.len(), actual: labels.len() });
        }
        let mut probs = vec![0.0; labels.len() * classes];
        for (i, &l) in labels.iter().enumerate() {
            let l = l as usize;
            if l >= classes {
                return Err(Error::InvalidData(format!("label {l} at element {i} is not < {classes}")));
            }
            probs[i * classes + l] = 1.0;
        }
        Ok(ProbMap { geometry, classes, probs })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.geometry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.probs.chunks_exact(self.classes)
    }

    /// Probability of class `c` at every element.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.rows().map(|r| r[c]).collect()
    }

    /// Per-element argmax; ties go to the lowest class index.
    pub fn map_labels(&self) -> Vec<ClassId> {
        self.rows().map(argmax).collect()
    }
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(row: &[f64]) -> ClassId {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best as ClassId
}

/// MAP labeling of a probability map.
pub fn map_labeling(p: &ProbMap) -> Vec<ClassId> {
    p.map_labels()
}

/// Dense per-element feature vectors with named channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    geometry: Geometry,
    dim: usize,
    values: Vec<f64>,
    channel_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(geometry: Geometry, channel_names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let dim = channel_names.len();
        if values.len() != geometry.len() * dim {
            return Err(Error::DimensionMismatch { expected: geometry.len() * dim, actual: values.len() });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite feature at element {}, channel {}",
                pos / dim.max(1),
                channel_names[pos % dim.max(1)]
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(dim);
        for name in &channel_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidData(format!("duplicate channel name {name}")));
            }
        }
        Ok(FeatureMatrix { geometry, dim, values, channel_names })
    }

    /// Build from channel-major planes (one `Vec` per channel).
    pub fn from_channels(geometry: Geometry, channels: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n = geometry.len();
        let dim = channels.len();
        let mut values = vec![0.0; n * dim];
        let mut names = Vec::with_capacity(dim);
        for (j, (name, plane)) in channels.into_iter().enumerate() {
            if plane.len() != n {
                return Err(Error::DimensionMismatch { expected: n, actual: plane.len() });
            }
            for (i, v) in plane.into_iter().enumerate() {
                values[i * dim + j] = v;
            }
            names.push(name);
        }
        FeatureMatrix::new(geometry, names, values)
    }

    /// Column-wise concatenation of matrices over the same elements.
    pub fn concat(parts: &[&FeatureMatrix]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidData("nothing to concatenate".into()))?;
        let geometry = first.geometry;
        let n = geometry.len();
        for p in parts {
            if p.geometry != geometry {
                return Err(Error::ShapeMismatch(format!(
                    "cannot concatenate {:?} with {:?}",
                    geometry, p.geometry
                )));
            }
        }
        let dim: usize = parts.iter().map(|p| p.dim).sum();
        let mut values = Vec::with_capacity(n * dim);
        for i in 0..n {
            for p in parts {
                values.extend_from_slice(p.row(i));
            }
        }
        let names = parts.iter().flat_map(|p| p.channel_names.iter().cloned()).collect();
        FeatureMatrix::new(geometry, names, values)
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.geometry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn channel(&self, j: usize) -> Vec<f64> {
        self.values.iter().skip(j).step_by(self.dim).copied().collect()
    }

    pub fn channel_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.channel_names.iter().position(|n| n == name).map(|j| self.channel(j))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }
}

/// Ground-truth labels on a pixel grid, with an optional ignore mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelGrid {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<ClassId>,
    pub ignore: Option<Vec<bool>>,
}

impl LabelGrid {
    pub fn new(width: usize, height: usize, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::DimensionMismatch { expected: width * height, actual: labels.len() });
        }
        Ok(LabelGrid { width, height, labels, ignore: None })
    }

    pub fn with_ignore(mut self, ignore: Vec<bool>) -> Result<Self> {
        if ignore.len() != self.labels.len() {
            return Err(Error::DimensionMismatch { expected: self.labels.len(), actual: ignore.len() });
        }
        self.ignore = Some(ignore);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_ignored(&self, i: usize) -> bool {
        self.ignore.as_ref().is_some_and(|m| m[i])
    }

    pub fn get(&self, x: usize, y: usize) -> ClassId {
        self.labels[y * self.width + x]
    }

    /// Checks every non-ignored label is `< classes`.
    pub fn validate(&self, classes: usize) -> Result<()> {
        for (i, &l) in self.labels.iter().enumerate() {
            if !self.is_ignored(i) && l as usize >= classes {
                return Err(Error::InvalidData(format!(
                    "label {l} at pixel ({}, {}) is not < {classes}",
                    i % self.width,
                    i / self.width
                )));
            }
        }
        Ok(())
    }
}

/// Colored point set in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub colors: Vec<[u8; 3]>,
    pub labels: Option<Vec<ClassId>>,
    pub normals: Option<Vec<[f64; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, colors: Vec<[u8; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidData("point cloud must contain at least one point".into()));
        }
        if colors.len() != points.len() {
            return Err(Error::DimensionMismatch { expected: points.len(), actual: colors.len() });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite point coordinate".into()));
        }
        Ok(PointCloud { points, colors, labels: None, normals: None })
    }

    pub fn with_labels(mut self, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != self.points.len() {
            return Err(Error::DimensionMismatch { expected: self.points.len(), actual: labels.len() });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_normals(mut self, normals: Vec<[f64; 3]>) -> Result<Self> {
        if normals.len() != self.points.len() {
            return Err(Error::DimensionMismatch { expected: self.points.len(), actual: normals.len() });
        }
        for (i, n) in normals.iter().enumerate() {
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidData(format!("normal {i} has norm {norm}")));
            }
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::Points(self.points.len())
    }
}
