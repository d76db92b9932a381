//! Auto-context features computed from a previous stage's class distributions.
//!
//! Image channel order (14C+1 in total):
//! probability (C), entropy (1), row label fraction (C), column label
//! fraction (C), row mean probability (C), column mean probability (C),
//! Euclidean distance to the nearest pixel of each class (C), Manhattan
//! distance (C), class color log-likelihood (C), inside-a-class-box flag (C),
//! box mean probability (C), then mean probability in the windows above,
//! below, left and right of the pixel (4C).
//!
//! Point clouds get the probabilities and the entropy only (C+1).

use std::collections::VecDeque;

use image::RgbImage;

use crate::data::types::{map_labeling, ClassId, FeatureMatrix, Geometry, ProbMap};
use crate::error::{Error, Result};

pub const COLOR_FALLBACK: f64 = -50.0;
pub const COLOR_MIN_PIXELS: usize = 10;
pub const COLOR_REGULARIZER: f64 = 1e-3;
/// Window extents: 10 wide by 5 tall above/below, 5 wide by 10 tall left/right.
pub const WINDOW_LONG: usize = 10;
pub const WINDOW_SHORT: usize = 5;

pub fn dim_2d(classes: usize) -> usize {
    14 * classes + 1
}

pub fn dim_3d(classes: usize) -> usize {
    classes + 1
}

type Channels = Vec<(String, Vec<f64>)>;

fn grid_dims(p: &ProbMap) -> Result<(usize, usize)> {
    p.geometry()
        .dims()
        .ok_or_else(|| Error::ShapeMismatch("image auto-context features need a grid".into()))
}

fn per_class(prefix: &str, classes: usize, planes: Vec<Vec<f64>>) -> Channels {
    debug_assert_eq!(planes.len(), classes);
    planes.into_iter().enumerate().map(|(c, v)| (format!("ac.{prefix}.c{c}"), v)).collect()
}

pub fn ac_class_probability(p: &ProbMap) -> Channels {
    per_class("prob", p.classes(), (0..p.classes()).map(|c| p.channel(c)).collect())
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(row: &[f64]) -> f64 {
    -row.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

pub fn ac_entropy(p: &ProbMap) -> Channels {
    vec![("ac.entropy".to_string(), p.rows().map(entropy).collect())]
}

/// Row and column MAP-label fractions, then row and column mean probabilities.
pub fn ac_row_col(p: &ProbMap) -> Result<Channels> {
    let (w, h) = grid_dims(p)?;
    let c = p.classes();
    let labels = map_labeling(p);
    let mut row_frac = vec![0.0; h * c];
    let mut col_frac = vec![0.0; w * c];
    let mut row_mean = vec![0.0; h * c];
    let mut col_mean = vec![0.0; w * c];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let l = labels[i] as usize;
            row_frac[y * c + l] += 1.0;
            col_frac[x * c + l] += 1.0;
            for (k, &v) in p.row(i).iter().enumerate() {
                row_mean[y * c + k] += v;
                col_mean[x * c + k] += v;
            }
        }
    }
    for v in row_frac.iter_mut().chain(row_mean.iter_mut()) {
        *v /= w as f64;
    }
    for v in col_frac.iter_mut().chain(col_mean.iter_mut()) {
        *v /= h as f64;
    }
    let broadcast = |per_row: &[f64], by_row: bool| -> Vec<Vec<f64>> {
        (0..c)
            .map(|k| {
                (0..w * h)
                    .map(|i| if by_row { per_row[(i / w) * c + k] } else { per_row[(i % w) * c + k] })
                    .collect()
            })
            .collect()
    };
    let mut out = per_class("rowfrac", c, broadcast(&row_frac, true));
    out.extend(per_class("colfrac", c, broadcast(&col_frac, false)));
    out.extend(per_class("rowmean", c, broadcast(&row_mean, true)));
    out.extend(per_class("colmean", c, broadcast(&col_mean, false)));
    Ok(out)
}

/// Stand-in for "no seed"; far above any squared grid distance.
const FAR: f64 = 1e20;

/// 1-D squared Euclidean distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let meet = |q: usize, r: usize| ((f[q] + (q * q) as f64) - (f[r] + (r * r) as f64)) / (2.0 * (q - r) as f64);
    for q in 1..n {
        let mut s = meet(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = meet(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance to the nearest `true` cell (separable two-pass).
pub fn euclidean_distance_transform(seeds: &[bool], w: usize, h: usize) -> Vec<f64> {
    let n = w.max(h);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    let mut f = vec![0.0; n];
    let mut o = vec![0.0; n];
    let mut grid: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { FAR }).collect();
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut o[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = o[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut o[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&o[..w]);
    }
    grid.into_iter().map(f64::sqrt).collect()
}

/// Exact city-block distance via forward and backward unit-cost chamfer passes.
pub fn manhattan_distance_transform(seeds: &[bool], w: usize, h: usize) -> Vec<f64> {
    let big = (w + h) as f64 * 2.0;
    let mut d: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { big }).collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x > 0 {
                d[i] = d[i].min(d[i - 1] + 1.0);
            }
            if y > 0 {
                d[i] = d[i].min(d[i - w] + 1.0);
            }
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let i = y * w + x;
            if x + 1 < w {
                d[i] = d[i].min(d[i + 1] + 1.0);
            }
            if y + 1 < h {
                d[i] = d[i].min(d[i + w] + 1.0);
            }
        }
    }
    d
}

/// Euclidean (C) then Manhattan (C) distances to the nearest pixel of each
/// MAP class; `w + h` everywhere for classes absent from the labeling.
pub fn ac_nearest_class_distance(labels: &[ClassId], w: usize, h: usize, classes: usize) -> Channels {
    let sentinel = (w + h) as f64;
    let mut euclid = Vec::with_capacity(classes);
    let mut manhattan = Vec::with_capacity(classes);
    for c in 0..classes {
        let seeds: Vec<bool> = labels.iter().map(|&l| l as usize == c).collect();
        if seeds.iter().any(|&s| s) {
            euclid.push(euclidean_distance_transform(&seeds, w, h));
            manhattan.push(manhattan_distance_transform(&seeds, w, h));
        } else {
            euclid.push(vec![sentinel; w * h]);
            manhattan.push(vec![sentinel; w * h]);
        }
    }
    let mut out = per_class("euclid", classes, euclid);
    out.extend(per_class("manhattan", classes, manhattan));
    out
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// Regularised 3-D Gaussian over colors in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ColorGaussian {
    pub mean: [f64; 3],
    /// Lower Cholesky factor of the covariance, row-major.
    chol: [[f64; 3]; 3],
    log_norm: f64,
}

impl ColorGaussian {
    pub fn fit(samples: &[[f64; 3]]) -> Option<Self> {
        let n = samples.len() as f64;
        let mut mean = [0.0; 3];
        for s in samples {
            for k in 0..3 {
                mean[k] += s[k];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = [[0.0; 3]; 3];
        for s in samples {
            for a in 0..3 {
                for b in 0..3 {
                    cov[a][b] += (s[a] - mean[a]) * (s[b] - mean[b]);
                }
            }
        }
        for (a, row) in cov.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v /= n;
            }
            row[a] += COLOR_REGULARIZER;
        }
        let chol = cholesky3(&cov)?;
        let log_det = 2.0 * (0..3).map(|k| chol[k][k].ln()).sum::<f64>();
        let log_norm = -0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Some(ColorGaussian { mean, chol, log_norm })
    }

    pub fn log_density(&self, x: [f64; 3]) -> f64 {
        // Solve L y = x - mean; the Mahalanobis term is |y|².
        let d = [x[0] - self.mean[0], x[1] - self.mean[1], x[2] - self.mean[2]];
        let l = &self.chol;
        let y0 = d[0] / l[0][0];
        let y1 = (d[1] - l[1][0] * y0) / l[1][1];
        let y2 = (d[2] - l[2][0] * y0 - l[2][1] * y1) / l[2][2];
        self.log_norm - 0.5 * (y0 * y0 + y1 * y1 + y2 * y2)
    }
}

fn cholesky3(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

pub fn pixel_color(image: &RgbImage, i: usize) -> [f64; 3] {
    let w = image.width() as usize;
    let p = image.get_pixel((i % w) as u32, (i / w) as u32);
    [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0]
}

/// Per class: fit a Gaussian to the colors of pixels whose probability is
/// above the channel's 75th percentile and emit every pixel's log-density.
pub fn ac_class_color_model(image: &RgbImage, p: &ProbMap) -> Result<Channels> {
    let (w, h) = grid_dims(p)?;
    if (image.width() as usize, image.height() as usize) != (w, h) {
        return Err(Error::ShapeMismatch(format!(
            "image is {}x{}, probabilities are {w}x{h}",
            image.width(),
            image.height()
        )));
    }
    let colors: Vec<[f64; 3]> = (0..w * h).map(|i| pixel_color(image, i)).collect();
    let mut planes = Vec::with_capacity(p.classes());
    for c in 0..p.classes() {
        let channel = p.channel(c);
        let q3 = percentile(&channel, 0.75);
        let samples: Vec<[f64; 3]> =
            channel.iter().zip(&colors).filter(|(&v, _)| v > q3).map(|(_, &col)| col).collect();
        let model = if samples.len() >= COLOR_MIN_PIXELS { ColorGaussian::fit(&samples) } else { None };
        planes.push(match model {
            Some(g) => colors.iter().map(|&col| g.log_density(col)).collect(),
            None => vec![COLOR_FALLBACK; w * h],
        });
    }
    Ok(per_class("color", p.classes(), planes))
}

/// Axis-aligned box `[x0, x1] × [y0, y1]` (inclusive) of one connected component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComponentBox {
    pub class: ClassId,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

/// Boxes of the 4-connected components of a labeling, in raster order of their first pixel.
pub fn component_boxes(labels: &[ClassId], w: usize, h: usize) -> Vec<ComponentBox> {
    let mut seen = vec![false; w * h];
    let mut boxes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] {
            continue;
        }
        let class = labels[start];
        let mut b = ComponentBox { class, x0: start % w, y0: start / w, x1: start % w, y1: start / w };
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            b.x0 = b.x0.min(x);
            b.x1 = b.x1.max(x);
            b.y0 = b.y0.min(y);
            b.y1 = b.y1.max(y);
            let mut visit = |j: usize| {
                if !seen[j] && labels[j] == class {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        boxes.push(b);
    }
    boxes
}

/// Per class: 1 inside any box of a class component, then the mean class
/// probability over the box (maximum over overlapping boxes, 0 outside).
pub fn ac_bounding_box(p: &ProbMap) -> Result<Channels> {
    let (w, h) = grid_dims(p)?;
    let c = p.classes();
    let labels = map_labeling(p);
    let mut inside = vec![vec![0.0; w * h]; c];
    let mut box_mean = vec![vec![0.0; w * h]; c];
    for b in component_boxes(&labels, w, h) {
        let k = b.class as usize;
        let mut sum = 0.0;
        for y in b.y0..=b.y1 {
            for x in b.x0..=b.x1 {
                sum += p.row(y * w + x)[k];
            }
        }
        let mean = sum / ((b.x1 - b.x0 + 1) * (b.y1 - b.y0 + 1)) as f64;
        for y in b.y0..=b.y1 {
            for x in b.x0..=b.x1 {
                let i = y * w + x;
                inside[k][i] = 1.0;
                box_mean[k][i] = f64::max(box_mean[k][i], mean);
            }
        }
    }
    let mut out = per_class("inbox", c, inside);
    out.extend(per_class("boxmean", c, box_mean));
    Ok(out)
}

/// Half-open pixel window `[x0, x1) × [y0, y1)` after clipping to the grid.
pub type Window = (usize, usize, usize, usize);

/// Above, below, left and right windows of pixel `(x, y)`, clipped to `w × h`.
pub fn neighborhood_windows(x: usize, y: usize, w: usize, h: usize) -> [Window; 4] {
    let (x, y, wi, hi) = (x as isize, y as isize, w as isize, h as isize);
    let half = (WINDOW_LONG / 2) as isize;
    let short = WINDOW_SHORT as isize;
    let long = WINDOW_LONG as isize;
    let clip = |x0: isize, x1: isize, y0: isize, y1: isize| -> Window {
        let cx0 = x0.clamp(0, wi) as usize;
        let cx1 = x1.clamp(0, wi) as usize;
        let cy0 = y0.clamp(0, hi) as usize;
        let cy1 = y1.clamp(0, hi) as usize;
        (cx0, cx1.max(cx0), cy0, cy1.max(cy0))
    };
    [
        clip(x - half, x - half + long, y - short, y),
        clip(x - half, x - half + long, y + 1, y + 1 + short),
        clip(x - short, x, y - half, y - half + long),
        clip(x + 1, x + 1 + short, y - half, y - half + long),
    ]
}

/// Mean probability per class in the four windows (0 for an empty window).
pub fn ac_neighborhood_stats(p: &ProbMap) -> Result<Channels> {
    let (w, h) = grid_dims(p)?;
    let c = p.classes();
    // Integral image with a zero border: s[(y)(w+1) + x] sums rows < y, cols < x.
    let stride = w + 1;
    let mut integral = vec![vec![0.0; stride * (h + 1)]; c];
    for (k, s) in integral.iter_mut().enumerate() {
        for y in 0..h {
            let mut run = 0.0;
            for x in 0..w {
                run += p.row(y * w + x)[k];
                s[(y + 1) * stride + x + 1] = s[y * stride + x + 1] + run;
            }
        }
    }
    let mut planes = vec![vec![vec![0.0; w * h]; c]; 4];
    for y in 0..h {
        for x in 0..w {
            for (dir, &(x0, x1, y0, y1)) in neighborhood_windows(x, y, w, h).iter().enumerate() {
                let area = (x1 - x0) * (y1 - y0);
                if area == 0 {
                    continue;
                }
                for (k, s) in integral.iter().enumerate() {
                    let sum = s[y1 * stride + x1] - s[y0 * stride + x1] - s[y1 * stride + x0] + s[y0 * stride + x0];
                    planes[dir][k][y * w + x] = sum / area as f64;
                }
            }
        }
    }
    let mut out = Channels::new();
    for (name, plane) in ["above", "below", "left", "right"].iter().zip(planes) {
        out.extend(per_class(name, c, plane));
    }
    Ok(out)
}

/// All seven image families in the documented order.
pub fn assemble_autocontext_2d(image: &RgbImage, p: &ProbMap) -> Result<FeatureMatrix> {
    let (w, h) = grid_dims(p)?;
    let mut channels = ac_class_probability(p);
    channels.extend(ac_entropy(p));
    channels.extend(ac_row_col(p)?);
    channels.extend(ac_nearest_class_distance(&map_labeling(p), w, h, p.classes()));
    channels.extend(ac_class_color_model(image, p)?);
    channels.extend(ac_bounding_box(p)?);
    channels.extend(ac_neighborhood_stats(p)?);
    debug_assert_eq!(channels.len(), dim_2d(p.classes()));
    FeatureMatrix::from_channels(Geometry::grid(w, h), channels)
}

/// Probabilities and entropy for point clouds.
pub fn assemble_autocontext_3d(p: &ProbMap) -> Result<FeatureMatrix> {
    if !matches!(p.geometry(), Geometry::Points(_)) {
        return Err(Error::ShapeMismatch("point auto-context features need point geometry".into()));
    }
    let mut channels = ac_class_probability(p);
    channels.extend(ac_entropy(p));
    FeatureMatrix::from_channels(p.geometry(), channels)
}
