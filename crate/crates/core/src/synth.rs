//! Procedural facades with exact ground truth: label rasters, noisy RGB
//! renderings and matching point clouds.
//!
//! Classes follow [`ClassPalette::facade`]: 0 wall, 1 window, 2 balcony,
//! 3 door, 4 roof, 5 sky, 6 shop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use image::{Rgb, RgbImage};

use crate::data::types::{ClassId, LabelGrid, PointCloud};
use crate::error::{Error, Result};

pub const WALL: ClassId = 0;
pub const WINDOW: ClassId = 1;
pub const BALCONY: ClassId = 2;
pub const DOOR: ClassId = 3;
pub const ROOF: ClassId = 4;
pub const SKY: ClassId = 5;
pub const SHOP: ClassId = 6;
pub const CLASSES: usize = 7;

/// Mean rendered color per class (not the label color).
pub const BASE_COLORS: [[u8; 3]; CLASSES] = [
    [196, 168, 136],
    [62, 72, 96],
    [120, 120, 120],
    [96, 54, 34],
    [150, 74, 70],
    [150, 190, 232],
    [176, 124, 58],
];

pub const GROUND_COLOR: [u8; 3] = [88, 88, 94];

#[derive(Clone, Debug, PartialEq)]
pub struct FacadeSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub sky_height: usize,
    pub roof_height: usize,
    /// Storeys including the ground floor.
    pub floors: usize,
    /// Windows per upper floor; 0 disables windows.
    pub window_cols: usize,
    pub window_width: usize,
    pub window_height: usize,
    /// Maximum horizontal offset (pixels) applied per window column.
    pub window_jitter: usize,
    /// `(width, height, left x)` of the door on the ground floor.
    pub door: Option<(usize, usize, usize)>,
    /// Upper floors (0 = top) whose windows get a balcony underneath.
    pub balcony_floors: Vec<usize>,
    pub balcony_height: usize,
    pub shop: bool,
    pub noise_sigma: f64,
    pub texture_amplitude: f64,
    /// Per-image random offset of each class color, uniform in ±this (0..1 scale).
    pub color_jitter: f64,
    pub meters_per_pixel: f64,
    pub window_inset: f64,
    pub balcony_depth: f64,
    pub ground_depth: f64,
}

impl Default for FacadeSpec {
    fn default() -> Self {
        FacadeSpec {
            seed: 0,
            width: 64,
            height: 80,
            sky_height: 8,
            roof_height: 6,
            floors: 4,
            window_cols: 4,
            window_width: 7,
            window_height: 9,
            window_jitter: 1,
            door: Some((8, 12, 28)),
            balcony_floors: vec![1],
            balcony_height: 3,
            shop: true,
            noise_sigma: 18.0 / 255.0,
            texture_amplitude: 10.0 / 255.0,
            color_jitter: 0.5,
            meters_per_pixel: 0.125,
            window_inset: 0.25,
            balcony_depth: 0.3,
            ground_depth: 1.5,
        }
    }
}

/// Axis-aligned pixel rectangle `[x, x + w) × [y, y + h)` of one class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub class: ClassId,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    fn overlaps(&self, o: &Rect) -> bool {
        self.x < o.x + o.w && o.x < self.x + self.w && self.y < o.y + o.h && o.y < self.y + self.h
    }
}

/// Non-overlapping element rectangles; uncovered pixels are wall.
#[derive(Clone, Debug, PartialEq)]
pub struct FacadeLayout {
    pub width: usize,
    pub height: usize,
    pub rects: Vec<Rect>,
}

impl FacadeLayout {
    /// Pixel count per class implied by the rectangles.
    pub fn class_areas(&self) -> [usize; CLASSES] {
        let mut a = [0; CLASSES];
        for r in &self.rects {
            a[r.class as usize] += r.area();
        }
        a[WALL as usize] = self.width * self.height - a.iter().sum::<usize>() + a[WALL as usize];
        a
    }

    pub fn labels(&self) -> Vec<ClassId> {
        let mut l = vec![WALL; self.width * self.height];
        for r in &self.rects {
            for y in r.y..r.y + r.h {
                l[y * self.width + r.x..y * self.width + r.x + r.w].fill(r.class);
            }
        }
        l
    }
}

fn infeasible<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::SpecInfeasible(msg.into()))
}

impl FacadeSpec {
    /// A varied facade drawn from `seed`; all variants are feasible.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_facade);
        let floors = rng.gen_range(3..=5);
        let window_cols = rng.gen_range(3..=5);
        let window_width = rng.gen_range(5..=8).min(64 / window_cols - 4);
        let sky_height = rng.gen_range(4..=10);
        let roof_height = rng.gen_range(4..=8);
        let body = 80 - sky_height - roof_height;
        let floor_h = body / floors;
        let window_height = rng.gen_range(6..=10).min(floor_h - 5);
        let door_w = rng.gen_range(6..=9);
        let door_h = rng.gen_range(10..=13).min(floor_h + body % floors - 1);
        let door_x = rng.gen_range(6..=64 - door_w - 6);
        let balcony_floors: Vec<usize> = (0..floors - 1).filter(|_| rng.gen_bool(0.4)).collect();
        FacadeSpec {
            seed,
            sky_height,
            roof_height,
            floors,
            window_cols,
            window_width,
            window_height,
            door: Some((door_w, door_h, door_x)),
            balcony_floors,
            shop: rng.gen_bool(0.7),
            ..FacadeSpec::default()
        }
    }

    pub fn layout(&self) -> Result<FacadeLayout> {
        let (w, h) = (self.width, self.height);
        if w < 16 || h < 16 {
            return infeasible(format!("{w}x{h} is below the 16x16 minimum"));
        }
        let top = self.sky_height + self.roof_height;
        if top >= h || self.floors == 0 {
            return infeasible("no room for the facade body");
        }
        let body = h - top;
        let floor_h = body / self.floors;
        let ground_y = top + floor_h * (self.floors - 1);
        let ground_h = h - ground_y;
        let mut rects = Vec::new();
        if self.sky_height > 0 {
            rects.push(Rect { class: SKY, x: 0, y: 0, w, h: self.sky_height });
        }
        if self.roof_height > 0 {
            rects.push(Rect { class: ROOF, x: 0, y: self.sky_height, w, h: self.roof_height });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        if self.window_cols > 0 && self.floors > 1 {
            let slot = w / self.window_cols;
            let need = self.window_width + 2 * self.window_jitter + 2;
            if slot < need {
                return infeasible(format!("{} windows of width {} do not fit in {w} px", self.window_cols, self.window_width));
            }
            let balcony = if self.balcony_floors.is_empty() { 0 } else { self.balcony_height };
            if self.window_height + balcony + 2 > floor_h {
                return infeasible(format!("window height {} does not fit floors of {floor_h} px", self.window_height));
            }
            let j = self.window_jitter as i64;
            let xs: Vec<usize> = (0..self.window_cols)
                .map(|c| {
                    let centre = (c * slot + slot / 2) as i64 + rng.gen_range(-j..=j);
                    (centre - (self.window_width / 2) as i64) as usize
                })
                .collect();
            for f in 0..self.floors - 1 {
                let fy = top + f * floor_h;
                let wy = fy + (floor_h - self.window_height - balcony) / 2;
                for &x in &xs {
                    rects.push(Rect { class: WINDOW, x, y: wy, w: self.window_width, h: self.window_height });
                    if self.balcony_floors.contains(&f) {
                        let bx = x.saturating_sub(1);
                        let bw = (self.window_width + 2).min(w - bx);
                        rects.push(Rect { class: BALCONY, x: bx, y: wy + self.window_height, w: bw, h: self.balcony_height });
                    }
                }
            }
        }

        let mut door_span = None;
        if let Some((dw, dh, dx)) = self.door {
            if dh > ground_h || dx + dw > w || dw == 0 || dh == 0 {
                return infeasible(format!("door {dw}x{dh} at x={dx} does not fit the ground floor"));
            }
            rects.push(Rect { class: DOOR, x: dx, y: h - dh, w: dw, h: dh });
            door_span = Some((dx, dx + dw));
        }
        if self.shop {
            let sy = ground_y + 2.min(ground_h / 4);
            let sh = h - sy;
            let (l, r) = door_span.map_or((w / 2, w / 2), |(a, b)| (a, b));
            if l >= 4 {
                rects.push(Rect { class: SHOP, x: 2, y: sy, w: l - 3, h: sh });
            }
            if w >= r + 4 {
                rects.push(Rect { class: SHOP, x: r + 1, y: sy, w: w - r - 3, h: sh });
            }
        }

        for (i, a) in rects.iter().enumerate() {
            if a.x + a.w > w || a.y + a.h > h {
                return infeasible(format!("{a:?} leaves the image"));
            }
            if rects[i + 1..].iter().any(|b| a.overlaps(b)) {
                return infeasible(format!("{a:?} overlaps another element"));
            }
        }
        Ok(FacadeLayout { width: w, height: h, rects })
    }
}

/// Low-frequency texture in [-1, 1] from two random sinusoid products.
fn texture_field(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| (rng.gen_range(12.0..32.0), rng.gen_range(12.0..32.0), rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3)))
        .collect();
    let tau = std::f64::consts::TAU;
    (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            waves.iter().map(|&(lx, ly, px, py)| 0.5 * (tau * x / lx + px).sin() * (tau * y / ly + py).sin()).sum()
        })
        .collect()
}

/// Rendered image and its label grid; deterministic in `spec.seed`.
pub fn generate_facade(spec: &FacadeSpec) -> Result<(RgbImage, LabelGrid)> {
    let layout = spec.layout()?;
    let labels = layout.labels();
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1));
    let mut base = [[0.0f64; 3]; CLASSES];
    for (c, b) in base.iter_mut().enumerate() {
        for k in 0..3 {
            let jitter = if spec.color_jitter > 0.0 { rng.gen_range(-spec.color_jitter..=spec.color_jitter) } else { 0.0 };
            b[k] = BASE_COLORS[c][k] as f64 / 255.0 + jitter;
        }
    }
    let texture = texture_field(&mut rng, w, h);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, &l) in labels.iter().enumerate() {
        let mut px = [0u8; 3];
        for k in 0..3 {
            let v = base[l as usize][k] + spec.texture_amplitude * texture[i] + noise.sample(&mut rng);
            px[k] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        img.put_pixel((i % w) as u32, (i / w) as u32, Rgb(px));
    }
    Ok((img, LabelGrid::new(w, h, labels)?))
}

/// A labelled cloud plus, for each point, the facade pixel it was sampled
/// from (`None` for ground points).
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCloud {
    pub cloud: PointCloud,
    pub pixels: Vec<Option<usize>>,
}

/// Sampled area in square meters: the non-sky facade plus the ground strip.
pub fn cloud_area(spec: &FacadeSpec) -> Result<f64> {
    let areas = spec.layout()?.class_areas();
    let s = spec.meters_per_pixel;
    let facade = (spec.width * spec.height - areas[SKY as usize]) as f64 * s * s;
    Ok(facade + spec.width as f64 * s * spec.ground_depth)
}

/// Poisson-distributed point count at `density` points per m². Facade points
/// lie in the plane y = 0 (x right, z up), windows recessed to y = −inset,
/// balconies protruding toward the street (+y); the ground strip at z = 0
/// extends to y = ground_depth and is labelled wall. Colors come from the
/// rendered facade.
pub fn generate_cloud(spec: &FacadeSpec, density: f64) -> Result<SynthCloud> {
    if !(density > 0.0 && density.is_finite()) {
        return Err(Error::InvalidConfig(format!("density must be positive, got {density}")));
    }
    let (img, grid) = generate_facade(spec)?;
    let s = spec.meters_per_pixel;
    let (w, h) = (spec.width, spec.height);
    let ground_area = w as f64 * s * spec.ground_depth;
    let facade_area = cloud_area(spec)? - ground_area;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xc10d_0000);
    let count = Poisson::new(density * (facade_area + ground_area))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?
        .sample(&mut rng) as usize;
    let jitter = Normal::new(0.0, 0.01).expect("valid sigma");
    let color_noise = Normal::new(0.0, spec.noise_sigma * 255.0).expect("valid sigma");
    let p_ground = ground_area / (facade_area + ground_area);

    let mut points = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    let mut pixels = Vec::with_capacity(count);
    while points.len() < count {
        if rng.gen_bool(p_ground) {
            let x = rng.gen_range(0.0..w as f64 * s);
            let y = rng.gen_range(0.0..spec.ground_depth);
            points.push([x, y, jitter.sample(&mut rng)]);
            colors.push(GROUND_COLOR.map(|c| (c as f64 + color_noise.sample(&mut rng)).clamp(0.0, 255.0).round() as u8));
            labels.push(WALL);
            pixels.push(None);
            continue;
        }
        let (u, v) = (rng.gen_range(0.0..w as f64 * s), rng.gen_range(0.0..h as f64 * s));
        let (px, py) = (((u / s) as usize).min(w - 1), ((v / s) as usize).min(h - 1));
        let i = py * w + px;
        let label = grid.labels[i];
        if label == SKY {
            continue;
        }
        let depth = match label {
            WINDOW => -spec.window_inset,
            BALCONY => spec.balcony_depth,
            _ => 0.0,
        };
        points.push([u, depth + jitter.sample(&mut rng), h as f64 * s - v]);
        colors.push(img.get_pixel(px as u32, py as u32).0);
        labels.push(label);
        pixels.push(Some(i));
    }
    let cloud = PointCloud::new(points, colors)?.with_labels(labels)?;
    Ok(SynthCloud { cloud, pixels })
}

/// `n` facades with seeds derived from `seed`.
pub fn corpus(seed: u64, n: usize) -> Result<Vec<(RgbImage, LabelGrid)>> {
    (0..n)
        .map(|i| generate_facade(&FacadeSpec::random(seed.wrapping_mul(1000).wrapping_add(i as u64))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_colors_are_separated() {
        let sigma = 18.0;
        for a in 0..CLASSES {
            for b in a + 1..CLASSES {
                let d: f64 = (0..3)
                    .map(|k| (BASE_COLORS[a][k] as f64 - BASE_COLORS[b][k] as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d >= 3.0 * sigma, "classes {a} and {b} are {d} apart");
            }
        }
    }

    #[test]
    fn bands_only_spec_has_three_classes() {
        let spec = FacadeSpec { window_cols: 0, door: None, shop: false, balcony_floors: vec![], ..Default::default() };
        let (_, labels) = generate_facade(&spec).unwrap();
        let mut present: Vec<ClassId> = labels.labels.clone();
        present.sort();
        present.dedup();
        assert_eq!(present, vec![WALL, ROOF, SKY]);
    }

    #[test]
    fn label_histogram_matches_layout_areas() {
        let spec = FacadeSpec::default();
        let layout = spec.layout().unwrap();
        let (_, labels) = generate_facade(&spec).unwrap();
        let mut hist = [0usize; CLASSES];
        for &l in &labels.labels {
            hist[l as usize] += 1;
        }
        assert_eq!(hist, layout.class_areas());
        // Independent accounting from the spec geometry.
        assert_eq!(hist[SKY as usize], 64 * 8);
        assert_eq!(hist[ROOF as usize], 64 * 6);
        assert_eq!(hist[WINDOW as usize], 3 * 4 * 7 * 9);
        assert_eq!(hist[BALCONY as usize], 4 * 9 * 3);
        assert_eq!(hist[DOOR as usize], 8 * 12);
    }

    #[test]
    fn deterministic() {
        let spec = FacadeSpec::random(3);
        assert_eq!(generate_facade(&spec).unwrap(), generate_facade(&spec).unwrap());
    }

    #[test]
    fn random_specs_are_feasible() {
        for seed in 0..200 {
            FacadeSpec::random(seed).layout().unwrap();
        }
    }

    #[test]
    fn infeasible_windows() {
        let spec = FacadeSpec { window_cols: 12, ..Default::default() };
        assert!(matches!(spec.layout(), Err(Error::SpecInfeasible(_))));
    }

    #[test]
    fn cloud_count_and_insets() {
        let spec = FacadeSpec::default();
        let c = generate_cloud(&spec, 40.0).unwrap();
        let expected = 40.0 * cloud_area(&spec).unwrap();
        let n = c.cloud.len() as f64;
        assert!((n - expected).abs() <= 0.05 * expected, "{n} vs {expected}");
        let labels = c.cloud.labels.as_ref().unwrap();
        for (p, &l) in c.cloud.points.iter().zip(labels) {
            if l == WINDOW {
                assert!((p[1] + spec.window_inset).abs() < 0.05);
            }
        }
        assert_eq!(generate_cloud(&spec, 40.0).unwrap(), c);
    }
}
