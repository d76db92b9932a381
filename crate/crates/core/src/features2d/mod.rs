//! Generic per-pixel image features: a texton filter bank with its row/column
//! averages, dense HOG, uniform LBP, normalised location and RGB, plus
//! optional precomputed score rasters supplied through the extra-channel hook.

pub mod filters;
pub mod hog;
pub mod lbp;

pub use filters::{filter_bank, filter_bank_with, FilterScales};
pub use hog::{hog_dense, hog_dense_with, HogParams};
pub use lbp::lbp;

use image::RgbImage;

use crate::data::io::FloatRaster;
use crate::data::types::{FeatureMatrix, Geometry};
use crate::error::{Error, Result};

/// Feature groups in assembly order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureGroups {
    pub filters: bool,
    pub row_col_averages: bool,
    pub location_color: bool,
    pub hog: bool,
    pub lbp: bool,
}

impl Default for FeatureGroups {
    fn default() -> Self {
        FeatureGroups { filters: true, row_col_averages: true, location_color: true, hog: true, lbp: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig2D {
    pub scales: FilterScales,
    pub hog: HogParams,
    pub lbp_radius: usize,
    pub lbp_samples: usize,
    pub groups: FeatureGroups,
    /// Names of extra channels, appended in this order after the built-in groups.
    pub extra_channels: Vec<String>,
}

impl Default for FeatureConfig2D {
    fn default() -> Self {
        FeatureConfig2D {
            scales: FilterScales::default(),
            hog: HogParams::default(),
            lbp_radius: 1,
            lbp_samples: 8,
            groups: FeatureGroups::default(),
            extra_channels: Vec::new(),
        }
    }
}

/// Channel count of the default configuration: 17 + 34 + 5 + 9 + 60.
pub const DEFAULT_DIM_2D: usize = 125;

impl FeatureConfig2D {
    /// Only the given group switched on.
    pub fn only(groups: FeatureGroups) -> Self {
        FeatureConfig2D { groups, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let g = self.groups;
        if !(g.filters || g.location_color || g.hog || g.lbp || !self.extra_channels.is_empty()) {
            return bad("at least one feature group must be enabled");
        }
        if g.row_col_averages && !g.filters {
            return bad("row/column averages require the filter bank");
        }
        let scales = self.scales.gaussian.iter().chain(&self.scales.log).chain(&self.scales.derivative);
        if scales.clone().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("filter scales must be positive");
        }
        if self.hog.cell == 0 || self.hog.bins == 0 || !(self.hog.clip > 0.0) {
            return bad("HOG cell size, bin count and clip must be positive");
        }
        if self.lbp_radius != 1 || self.lbp_samples != 8 {
            return bad("only radius-1, 8-sample LBP is supported");
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        let g = self.groups;
        let f = self.scales.channels();
        (g.filters as usize) * f
            + (g.row_col_averages as usize) * 2 * f
            + (g.location_color as usize) * 5
            + (g.hog as usize) * self.hog.bins
            + (g.lbp as usize) * (1 + lbp::LBP_CODES)
            + self.extra_channels.len()
    }

    /// Stable text form; changes whenever the produced features would.
    pub fn describe(&self) -> String {
        let g = self.groups;
        format!(
            "f2d;gauss={:?};log={:?};deriv={:?};hog={}x{}@{};lbp={}/{};groups={}{}{}{}{};extra={}",
            self.scales.gaussian,
            self.scales.log,
            self.scales.derivative,
            self.hog.cell,
            self.hog.bins,
            self.hog.clip,
            self.lbp_radius,
            self.lbp_samples,
            g.filters as u8,
            g.row_col_averages as u8,
            g.location_color as u8,
            g.hog as u8,
            g.lbp as u8,
            self.extra_channels.join(",")
        )
    }
}

/// `(x/(w-1), y/(h-1), R/255, G/255, B/255)`; a single row or column maps to 0.
pub fn location_color(image: &RgbImage) -> FeatureMatrix {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let norm = |v: usize, n: usize| if n > 1 { v as f64 / (n - 1) as f64 } else { 0.0 };
    let mut values = Vec::with_capacity(w * h * 5);
    for (x, y, p) in image.enumerate_pixels() {
        values.extend([
            norm(x as usize, w),
            norm(y as usize, h),
            p[0] as f64 / 255.0,
            p[1] as f64 / 255.0,
            p[2] as f64 / 255.0,
        ]);
    }
    let names = ["loc.x", "loc.y", "rgb.r", "rgb.g", "rgb.b"].map(String::from).to_vec();
    FeatureMatrix::new(Geometry::grid(w, h), names, values).expect("location/color output is finite")
}

/// Per input channel: mean over the pixel's row, then mean over its column.
pub fn row_col_averages(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    let (w, h) = f.geometry().dims().ok_or_else(|| Error::ShapeMismatch("row/column averages need a grid".into()))?;
    let d = f.dim();
    let mut row_mean = vec![0.0; h * d];
    let mut col_mean = vec![0.0; w * d];
    for y in 0..h {
        for x in 0..w {
            let r = f.row(y * w + x);
            for j in 0..d {
                row_mean[y * d + j] += r[j];
                col_mean[x * d + j] += r[j];
            }
        }
    }
    row_mean.iter_mut().for_each(|v| *v /= w as f64);
    col_mean.iter_mut().for_each(|v| *v /= h as f64);
    let mut values = Vec::with_capacity(w * h * 2 * d);
    for y in 0..h {
        for x in 0..w {
            for j in 0..d {
                values.push(row_mean[y * d + j]);
                values.push(col_mean[x * d + j]);
            }
        }
    }
    let names = f.channel_names().iter().flat_map(|n| [format!("{n}.rowavg"), format!("{n}.colavg")]).collect();
    FeatureMatrix::new(f.geometry(), names, values)
}

/// Concatenates all enabled groups, then the extra rasters (one per name in
/// `cfg.extra_channels`, same order).
pub fn assemble_image_features(image: &RgbImage, cfg: &FeatureConfig2D, extras: &[FloatRaster]) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut parts = Vec::new();
    let g = cfg.groups;
    if g.filters {
        let bank = filter_bank_with(image, &cfg.scales)?;
        if g.row_col_averages {
            let avg = row_col_averages(&bank)?;
            parts.push(bank);
            parts.push(avg);
        } else {
            parts.push(bank);
        }
    }
    if g.location_color {
        parts.push(location_color(image));
    }
    if g.hog {
        parts.push(hog_dense_with(image, cfg.hog));
    }
    if g.lbp {
        parts.push(lbp(image));
    }
    if extras.len() != cfg.extra_channels.len() {
        return Err(Error::DimensionMismatch { expected: cfg.extra_channels.len(), actual: extras.len() });
    }
    if !extras.is_empty() {
        let mut channels = Vec::with_capacity(extras.len());
        for (name, r) in cfg.extra_channels.iter().zip(extras) {
            if (r.width, r.height) != (w, h) {
                return Err(Error::ShapeMismatch(format!(
                    "extra channel {name} is {}x{}, image is {w}x{h}",
                    r.width, r.height
                )));
            }
            channels.push((format!("extra.{name}"), r.values.iter().map(|&v| v as f64).collect()));
        }
        parts.push(FeatureMatrix::from_channels(Geometry::grid(w, h), channels)?);
    }
    FeatureMatrix::concat(&parts.iter().collect::<Vec<_>>())
}
