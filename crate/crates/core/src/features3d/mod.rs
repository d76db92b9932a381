//! Per-point descriptors for facade point clouds.
//!
//! Layout (76 channels with the defaults): mean RGB over the k nearest
//! neighbours, its CIELab value, the oriented normal, an 8×8 spin image,
//! height above the ground plane, signed depth from the facade plane
//! (positive toward the street) and inverse height (distance below the
//! topmost point). Zero-valued reserved channels pad the vector up to the
//! configured dimension.

pub mod geometry;
pub mod kdtree;
pub mod spin;

pub use geometry::{estimate_normals, estimate_scene_planes, orient, ransac_plane, PlaneModel, RansacConfig, ScenePlanes};
pub use kdtree::KdTree;
pub use spin::spin_image;

use rayon::prelude::*;

use crate::data::types::{FeatureMatrix, PointCloud};
use crate::error::{Error, Result};
use crate::features2d::filters::srgb_to_lab_f64;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig3D {
    /// Neighbourhood size for normals and mean color.
    pub k: usize,
    pub spin_radius: f64,
    pub spin_bins: usize,
    pub ransac: RansacConfig,
    /// Share of lowest points used to fit the ground plane.
    pub ground_fraction: f64,
    /// Total output dimension; anything beyond the computed channels is zero padding.
    pub dim: usize,
}

pub const DEFAULT_DIM_3D: usize = 76;

impl Default for FeatureConfig3D {
    fn default() -> Self {
        FeatureConfig3D {
            k: 16,
            spin_radius: 0.5,
            spin_bins: 8,
            ransac: RansacConfig::default(),
            ground_fraction: 0.2,
            dim: DEFAULT_DIM_3D,
        }
    }
}

impl FeatureConfig3D {
    /// Channels actually computed, before padding.
    pub fn base_dim(&self) -> usize {
        12 + self.spin_bins * self.spin_bins
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k < 3 {
            return bad("k must be at least 3".into());
        }
        if !(self.spin_radius > 0.0 && self.spin_radius.is_finite()) || self.spin_bins == 0 {
            return bad("spin image radius and bins must be positive".into());
        }
        if !(self.ransac.threshold > 0.0) || self.ransac.iterations == 0 {
            return bad("RANSAC threshold and iterations must be positive".into());
        }
        if !(self.ground_fraction > 0.0 && self.ground_fraction <= 1.0) {
            return bad("ground_fraction must lie in (0, 1]".into());
        }
        if self.dim < self.base_dim() {
            return bad(format!("dim {} is below the {} computed channels", self.dim, self.base_dim()));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "f3d;k={};spin={}x{}@{};ransac={}@{}#{};ground={};dim={}",
            self.k,
            self.spin_bins,
            self.spin_bins,
            self.spin_radius,
            self.ransac.iterations,
            self.ransac.threshold,
            self.ransac.seed,
            self.ground_fraction,
            self.dim
        )
    }

    pub fn channel_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["rgb.r", "rgb.g", "rgb.b", "lab.l", "lab.a", "lab.b", "normal.x", "normal.y", "normal.z"]
            .map(String::from)
            .to_vec();
        for r in 0..self.spin_bins {
            for c in 0..self.spin_bins {
                names.push(format!("spin.r{r}c{c}"));
            }
        }
        names.extend(["height", "facade_depth", "inverse_height"].map(String::from));
        for i in names.len()..self.dim {
            names.push(format!("reserved{i}"));
        }
        names
    }
}

/// Normals (computed if missing) and planes, then the per-point descriptors.
pub fn point_features(cloud: &PointCloud, cfg: &FeatureConfig3D) -> Result<(FeatureMatrix, ScenePlanes)> {
    cfg.validate()?;
    let cloud = if cloud.normals.is_some() { cloud.clone() } else { estimate_normals(cloud, cfg.k)?.0 };
    let planes = estimate_scene_planes(&cloud, &cfg.ransac, cfg.ground_fraction)?;
    Ok((assemble_point_features(&cloud, &planes, cfg)?, planes))
}

pub fn assemble_point_features(cloud: &PointCloud, planes: &ScenePlanes, cfg: &FeatureConfig3D) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let normals = cloud
        .normals
        .as_ref()
        .ok_or_else(|| Error::InvalidData("point features need normals".into()))?;
    let n = cloud.len();
    if n <= cfg.k {
        return Err(Error::TooFewPoints { n, k: cfg.k });
    }
    let tree = KdTree::build(&cloud.points);
    let top = cloud.points.iter().map(|p| p[2]).fold(f64::NEG_INFINITY, f64::max);
    let d = cfg.dim;
    let mut values = vec![0.0; n * d];
    values.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
        let p = &cloud.points[i];
        let mut rgb = [0.0; 3];
        let nn = tree.knn(p, cfg.k);
        for &(_, j) in &nn {
            for c in 0..3 {
                rgb[c] += cloud.colors[j][c] as f64;
            }
        }
        rgb.iter_mut().for_each(|v| *v /= nn.len() as f64);
        let lab = srgb_to_lab_f64(rgb);
        for c in 0..3 {
            row[c] = rgb[c] / 255.0;
            row[3 + c] = lab[c];
            row[6 + c] = normals[i][c];
        }
        let spin = spin_image(&tree, &cloud.points, normals, i, cfg.spin_radius, cfg.spin_bins);
        row[9..9 + spin.len()].copy_from_slice(&spin);
        let k = 9 + spin.len();
        row[k] = planes.ground.signed_distance(p);
        row[k + 1] = planes.facade.signed_distance(p);
        row[k + 2] = top - p[2];
    });
    FeatureMatrix::new(cloud.geometry(), cfg.channel_names(), values)
}
