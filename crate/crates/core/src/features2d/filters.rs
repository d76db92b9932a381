//! Color conversion and the separable Gaussian filter bank.

use image::RgbImage;

use crate::data::types::{FeatureMatrix, Geometry};
use crate::error::{Error, Result};

pub const MIN_FILTER_SIZE: usize = 16;

/// sRGB (0..255) to CIELab under D65.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    srgb_to_lab_f64([rgb[0] as f64, rgb[1] as f64, rgb[2] as f64])
}

/// As [`srgb_to_lab`] for fractional 0..255 inputs (e.g. averaged colors).
pub fn srgb_to_lab_f64(rgb: [f64; 3]) -> [f64; 3] {
    let lin = |c: f64| {
        let c = c / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let f = |t: f64| {
        const D: f64 = 6.0 / 29.0;
        if t > D * D * D {
            t.cbrt()
        } else {
            t / (3.0 * D * D) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(x / 0.950_47), f(y), f(z / 1.088_83));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Lab planes (L, a, b), each row-major.
pub fn lab_planes(image: &RgbImage) -> [Vec<f64>; 3] {
    let n = (image.width() * image.height()) as usize;
    let mut planes = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for px in image.pixels() {
        let lab = srgb_to_lab(px.0);
        for c in 0..3 {
            planes[c].push(lab[c]);
        }
    }
    planes
}

/// Half-sample symmetric reflection: `... b a | a b c ... y z | z y ...`.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m >= n { period - 1 - m } else { m }) as usize
}

pub fn kernel_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Normalised Gaussian taps for offsets `-r..=r`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = kernel_radius(sigma) as isize;
    let mut k: Vec<f64> = (-r..=r).map(|m| (-(m * m) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// First-derivative-of-Gaussian taps; correlating with it differentiates the smoothed signal.
pub fn gaussian_derivative_kernel(sigma: f64) -> Vec<f64> {
    let g = gaussian_kernel(sigma);
    let r = (g.len() / 2) as isize;
    (-r..=r).zip(&g).map(|(m, gv)| m as f64 / (sigma * sigma) * gv).collect()
}

/// Second-derivative-of-Gaussian taps, adjusted to sum to exactly zero response on constants.
pub fn gaussian_second_derivative_kernel(sigma: f64) -> Vec<f64> {
    let g = gaussian_kernel(sigma);
    let r = (g.len() / 2) as isize;
    let s2 = sigma * sigma;
    let mut k: Vec<f64> = (-r..=r).zip(&g).map(|(m, gv)| ((m * m) as f64 / (s2 * s2) - 1.0 / s2) * gv).collect();
    let total: f64 = k.iter().sum();
    for (kv, gv) in k.iter_mut().zip(&g) {
        *kv -= total * gv;
    }
    k
}

/// Separable correlation `out(x, y) = Σ plane(x+i, y+j) · kx[i] · ky[j]` with reflect borders.
pub fn correlate_separable(plane: &[f64], width: usize, height: usize, kx: &[f64], ky: &[f64]) -> Vec<f64> {
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let mut tmp = vec![0.0; width * height];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (t, &k) in kx.iter().enumerate() {
                acc += row[reflect(x as isize + t as isize - rx, width)] * k;
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for (t, &k) in ky.iter().enumerate() {
            let sy = reflect(y as isize + t as isize - ry, height);
            let src = &tmp[sy * width..(sy + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s * k;
            }
        }
    }
    out
}

/// Scales of the texton-style bank.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterScales {
    pub gaussian: Vec<f64>,
    pub log: Vec<f64>,
    pub derivative: Vec<f64>,
}

impl Default for FilterScales {
    fn default() -> Self {
        FilterScales { gaussian: vec![1.0, 2.0, 4.0], log: vec![1.0, 2.0, 4.0, 8.0], derivative: vec![2.0, 4.0] }
    }
}

impl FilterScales {
    pub fn channels(&self) -> usize {
        3 * self.gaussian.len() + self.log.len() + 2 * self.derivative.len()
    }
}

/// Gaussians on L, a, b; Laplacian-of-Gaussian on L; x/y Gaussian derivatives on L.
/// 17 channels with the default scales.
pub fn filter_bank(image: &RgbImage) -> Result<FeatureMatrix> {
    filter_bank_with(image, &FilterScales::default())
}

pub fn filter_bank_with(image: &RgbImage, scales: &FilterScales) -> Result<FeatureMatrix> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w < MIN_FILTER_SIZE || h < MIN_FILTER_SIZE {
        return Err(Error::ImageTooSmall { width: w, height: h, min: MIN_FILTER_SIZE });
    }
    let lab = lab_planes(image);
    let mut channels = Vec::with_capacity(scales.channels());
    for (c, name) in ["L", "a", "b"].iter().enumerate() {
        for &s in &scales.gaussian {
            let g = gaussian_kernel(s);
            channels.push((format!("filter.gauss.{name}.s{s}"), correlate_separable(&lab[c], w, h, &g, &g)));
        }
    }
    for &s in &scales.log {
        let g = gaussian_kernel(s);
        let d2 = gaussian_second_derivative_kernel(s);
        let xx = correlate_separable(&lab[0], w, h, &d2, &g);
        let yy = correlate_separable(&lab[0], w, h, &g, &d2);
        channels.push((format!("filter.log.L.s{s}"), xx.iter().zip(&yy).map(|(a, b)| a + b).collect()));
    }
    for &s in &scales.derivative {
        let g = gaussian_kernel(s);
        let d = gaussian_derivative_kernel(s);
        channels.push((format!("filter.dx.L.s{s}"), correlate_separable(&lab[0], w, h, &d, &g)));
        channels.push((format!("filter.dy.L.s{s}"), correlate_separable(&lab[0], w, h, &g, &d)));
    }
    FeatureMatrix::from_channels(Geometry::grid(w, h), channels)
}
