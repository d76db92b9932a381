//! Spin images: neighbour histograms in the point's (α, β) cylindrical frame.

use super::kdtree::KdTree;

/// Coordinates of `q` relative to the oriented point `(p, n)`:
/// α = distance from the normal axis, β = signed height along the normal.
#[inline]
pub fn spin_coordinates(p: &[f64; 3], n: &[f64; 3], q: &[f64; 3]) -> (f64, f64) {
    let d = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
    let beta = n[0] * d[0] + n[1] * d[1] + n[2] * d[2];
    let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    ((d2 - beta * beta).max(0.0).sqrt(), beta)
}

/// Splits unit mass at continuous bin coordinate `u` between two neighbouring bins.
#[inline]
fn linear_weights(u: f64, bins: usize) -> [(usize, f64); 2] {
    let u = u.clamp(0.0, (bins - 1) as f64);
    let lo = (u.floor() as usize).min(bins - 1);
    let hi = (lo + 1).min(bins - 1);
    let t = u - lo as f64;
    [(lo, 1.0 - t), (hi, t)]
}

/// Adds one neighbour at `(alpha, beta)`. Rows run from β = +radius (row 0)
/// down to β = −radius; columns from α = 0 outward. Bin `i` is centred at `(i + 0.5)·width`.
pub fn accumulate(hist: &mut [f64], bins: usize, radius: f64, alpha: f64, beta: f64) {
    let wa = radius / bins as f64;
    let wb = 2.0 * radius / bins as f64;
    let u = alpha / wa - 0.5;
    let v = (radius - beta) / wb - 0.5;
    for (col, a) in linear_weights(u, bins) {
        for (row, b) in linear_weights(v, bins) {
            hist[row * bins + col] += a * b;
        }
    }
}

/// L1-normalised `bins × bins` spin image of point `index`; all zeros when it
/// has no neighbours within `radius`.
pub fn spin_image(
    tree: &KdTree,
    points: &[[f64; 3]],
    normals: &[[f64; 3]],
    index: usize,
    radius: f64,
    bins: usize,
) -> Vec<f64> {
    let mut hist = vec![0.0; bins * bins];
    let p = &points[index];
    let n = &normals[index];
    for (_, j) in tree.within(p, radius) {
        if j == index {
            continue;
        }
        let (alpha, beta) = spin_coordinates(p, n, &points[j]);
        accumulate(&mut hist, bins, radius, alpha, beta);
    }
    let total: f64 = hist.iter().sum();
    if total > 0.0 {
        hist.iter_mut().for_each(|v| *v /= total);
    }
    hist
}
