//! Dense HOG: every pixel carries the block-normalised histogram of its cell.

use image::RgbImage;

use super::filters::reflect;
use crate::data::types::{FeatureMatrix, Geometry};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HogParams {
    pub cell: usize,
    pub bins: usize,
    pub clip: f64,
}

impl Default for HogParams {
    fn default() -> Self {
        HogParams { cell: 8, bins: 9, clip: 0.2 }
    }
}

const NORM_EPS2: f64 = 1e-12;

/// Rec. 601 luma in [0, 1].
pub fn luma(image: &RgbImage) -> Vec<f64> {
    image
        .pixels()
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
        .collect()
}

/// Unsigned orientation bin; bin `k` is centred on `k·180°/bins`, so horizontal gradients land in bin 0.
#[inline]
pub fn orientation_bin(gx: f64, gy: f64, bins: usize) -> usize {
    let mut theta = gy.atan2(gx);
    if theta < 0.0 {
        theta += std::f64::consts::PI;
    }
    let width = std::f64::consts::PI / bins as f64;
    ((theta / width).round() as usize) % bins
}

fn l2_clip_normalise(v: &mut [f64], clip: f64) {
    let norm = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() + NORM_EPS2).sqrt();
    let n = norm(v);
    v.iter_mut().for_each(|x| *x = (*x / n).min(clip));
    let n = norm(v);
    v.iter_mut().for_each(|x| *x /= n);
}

pub fn hog_dense(image: &RgbImage) -> FeatureMatrix {
    hog_dense_with(image, HogParams::default())
}

pub fn hog_dense_with(image: &RgbImage, params: HogParams) -> FeatureMatrix {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let lum = luma(image);
    let at = |x: isize, y: isize| lum[reflect(y, h) * w + reflect(x, w)];
    let (ncx, ncy) = (w.div_ceil(params.cell), h.div_ceil(params.cell));
    let nb = params.bins;

    let mut cells = vec![0.0; ncx * ncy * nb];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let gx = at(xi + 1, yi) - at(xi - 1, yi);
            let gy = at(xi, yi + 1) - at(xi, yi - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag > 0.0 {
                let c = (y / params.cell) * ncx + x / params.cell;
                cells[c * nb + orientation_bin(gx, gy, nb)] += mag;
            }
        }
    }

    // Each cell is normalised within the 2×2 block anchored at it (shifted to stay inside the grid).
    let mut normalised = vec![0.0; ncx * ncy * nb];
    let mut block = Vec::with_capacity(4 * nb);
    for cy in 0..ncy {
        for cx in 0..ncx {
            let bx = cx.min(ncx.saturating_sub(2));
            let by = cy.min(ncy.saturating_sub(2));
            block.clear();
            let mut own = 0;
            for yy in by..(by + 2).min(ncy) {
                for xx in bx..(bx + 2).min(ncx) {
                    if (xx, yy) == (cx, cy) {
                        own = block.len();
                    }
                    let c = yy * ncx + xx;
                    block.extend_from_slice(&cells[c * nb..(c + 1) * nb]);
                }
            }
            l2_clip_normalise(&mut block, params.clip);
            let c = cy * ncx + cx;
            normalised[c * nb..(c + 1) * nb].copy_from_slice(&block[own..own + nb]);
        }
    }

    let mut values = Vec::with_capacity(w * h * nb);
    for y in 0..h {
        for x in 0..w {
            let c = (y / params.cell) * ncx + x / params.cell;
            values.extend_from_slice(&normalised[c * nb..(c + 1) * nb]);
        }
    }
    let names = (0..nb).map(|b| format!("hog.bin{b}")).collect();
    FeatureMatrix::new(Geometry::grid(w, h), names, values).expect("hog output is finite")
}
