//! Uniform local binary patterns (radius 1, 8 samples).

use image::RgbImage;

use super::filters::reflect;
use super::hog::luma;
use crate::data::types::{FeatureMatrix, Geometry};

/// Number of distinct codes: 58 uniform patterns plus one bucket for the rest.
pub const LBP_CODES: usize = 59;
pub const LBP_CELL: usize = 16;

/// Sample offsets `(dx, dy)` for bits 0..8, counter-clockwise from +x with y pointing down.
pub const OFFSETS: [(isize, isize); 8] = [(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)];

/// Circular 0/1 transitions in an 8-bit pattern.
pub fn transitions(raw: u8) -> u32 {
    (raw ^ raw.rotate_right(1)).count_ones()
}

/// Maps raw 8-bit patterns to codes: uniform patterns in ascending raw order, then 58.
pub fn uniform_table() -> [u8; 256] {
    let mut table = [58u8; 256];
    let mut next = 0u8;
    for raw in 0..=255u8 {
        if transitions(raw) <= 2 {
            table[raw as usize] = next;
            next += 1;
        }
    }
    table
}

/// Raw pattern: bit `p` set iff neighbour `p` is strictly brighter than the centre.
pub fn raw_codes(lum: &[f64], width: usize, height: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let c = lum[y * width + x];
            let mut raw = 0u8;
            for (p, &(dx, dy)) in OFFSETS.iter().enumerate() {
                let v = lum[reflect(y as isize + dy, height) * width + reflect(x as isize + dx, width)];
                if v > c {
                    raw |= 1 << p;
                }
            }
            out.push(raw);
        }
    }
    out
}

/// One code channel plus the normalised code histogram of the pixel's 16×16 cell.
pub fn lbp(image: &RgbImage) -> FeatureMatrix {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let table = uniform_table();
    let codes: Vec<u8> = raw_codes(&luma(image), w, h).into_iter().map(|r| table[r as usize]).collect();

    let ncx = w.div_ceil(LBP_CELL);
    let ncy = h.div_ceil(LBP_CELL);
    let mut hist = vec![0.0; ncx * ncy * LBP_CODES];
    let mut counts = vec![0usize; ncx * ncy];
    for y in 0..h {
        for x in 0..w {
            let c = (y / LBP_CELL) * ncx + x / LBP_CELL;
            hist[c * LBP_CODES + codes[y * w + x] as usize] += 1.0;
            counts[c] += 1;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        hist[c * LBP_CODES..(c + 1) * LBP_CODES].iter_mut().for_each(|v| *v /= n as f64);
    }

    let dim = 1 + LBP_CODES;
    let mut values = Vec::with_capacity(w * h * dim);
    for y in 0..h {
        for x in 0..w {
            values.push(codes[y * w + x] as f64);
            let c = (y / LBP_CELL) * ncx + x / LBP_CELL;
            values.extend_from_slice(&hist[c * LBP_CODES..(c + 1) * LBP_CODES]);
        }
    }
    let mut names = vec!["lbp.code".to_string()];
    names.extend((0..LBP_CODES).map(|k| format!("lbp.hist{k}")));
    FeatureMatrix::new(Geometry::grid(w, h), names, values).expect("lbp output is finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn table_has_58_uniform_codes() {
        let t = uniform_table();
        assert_eq!((0..256).filter(|&r| t[r] < 58).count(), 58);
        assert_eq!(t[0], 0);
        assert_eq!(t[255], 57);
        assert_eq!(t[0b0101_0101], 58);
    }

    #[test]
    fn constant_image_is_code_zero() {
        let img = RgbImage::from_pixel(20, 20, image::Rgb([77, 77, 77]));
        let f = lbp(&img);
        assert!((0..f.len()).all(|i| f.row(i)[0] == 0.0));
        assert_eq!(f.row(0)[1], 1.0);
    }

    #[test]
    fn bright_pixel_neighbours_get_distinct_codes() {
        let mut img = RgbImage::from_pixel(16, 16, image::Rgb([10, 10, 10]));
        img.put_pixel(8, 8, image::Rgb([250, 250, 250]));
        let f = lbp(&img);
        let table = uniform_table();
        // Neighbour at offset p from the bright pixel sees it at the opposite offset (p + 4) mod 8.
        let mut seen = Vec::new();
        for (p, &(dx, dy)) in OFFSETS.iter().enumerate() {
            let (x, y) = ((8 + dx) as usize, (8 + dy) as usize);
            let code = f.row(y * 16 + x)[0];
            assert_eq!(code, table[1usize << ((p + 4) % 8)] as f64);
            seen.push(code as u8);
        }
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 8);
        assert_eq!(f.row(8 * 16 + 8)[0], 0.0);
    }

    #[test]
    fn codes_match_bitwise_reference() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let img = RgbImage::from_fn(32, 32, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]));
        let f = lbp(&img);
        let lum = |x: i64, y: i64| {
            let p = img.get_pixel(reflect(x as isize, 32) as u32, reflect(y as isize, 32) as u32);
            (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
        };
        let offsets = [(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)];
        let mut uniform: Vec<u32> = Vec::new();
        for raw in 0u32..256 {
            let bits: Vec<u32> = (0..8).map(|b| (raw >> b) & 1).collect();
            let t = (0..8).filter(|&b| bits[b] != bits[(b + 1) % 8]).count();
            if t <= 2 {
                uniform.push(raw);
            }
        }
        for y in 0..32i64 {
            for x in 0..32i64 {
                let c = lum(x, y);
                let raw: u32 = offsets
                    .iter()
                    .enumerate()
                    .map(|(b, &(dx, dy))| if lum(x + dx, y + dy) > c { 1 << b } else { 0 })
                    .sum();
                let expected = uniform.iter().position(|&u| u == raw).unwrap_or(58);
                assert_eq!(f.row((y * 32 + x) as usize)[0], expected as f64);
            }
        }
    }
}
