//! Class palette: the mapping between class indices, label-raster colors and names.

use std::collections::HashMap;

use image::RgbImage;

use super::types::{ClassId, LabelGrid};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaletteEntry {
    pub index: ClassId,
    pub rgb: [u8; 3],
    pub name: String,
}

/// Ordered classes `0..C` plus colors that mark ignored pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassPalette {
    entries: Vec<PaletteEntry>,
    ignore_colors: Vec<[u8; 3]>,
}

impl ClassPalette {
    /// Entries may arrive in any order; indices must be exactly `0..C`.
    pub fn new(mut entries: Vec<PaletteEntry>, ignore_colors: Vec<[u8; 3]>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidConfig("palette has no classes".into()));
        }
        entries.sort_by_key(|e| e.index);
        for (i, e) in entries.iter().enumerate() {
            if e.index as usize != i {
                return Err(Error::InvalidConfig(format!(
                    "palette indices must be 0..{} without gaps or duplicates (found {} at position {i})",
                    entries.len(),
                    e.index
                )));
            }
        }
        let mut seen = HashMap::new();
        for e in &entries {
            if let Some(prev) = seen.insert(e.rgb, e.index) {
                return Err(Error::InvalidConfig(format!(
                    "classes {prev} and {} share color {:?}",
                    e.index, e.rgb
                )));
            }
        }
        for c in &ignore_colors {
            if seen.contains_key(c) {
                return Err(Error::InvalidConfig(format!("ignore color {c:?} is also a class color")));
            }
        }
        Ok(ClassPalette { entries, ignore_colors })
    }

    /// The seven facade classes used by the synthetic generator.
    pub fn facade() -> Self {
        let e = |index: ClassId, rgb: [u8; 3], name: &str| PaletteEntry { index, rgb, name: name.to_string() };
        ClassPalette::new(
            vec![
                e(0, [255, 255, 0], "wall"),
                e(1, [255, 0, 0], "window"),
                e(2, [128, 0, 255], "balcony"),
                e(3, [255, 128, 0], "door"),
                e(4, [0, 0, 255], "roof"),
                e(5, [128, 255, 255], "sky"),
                e(6, [0, 255, 0], "shop"),
            ],
            vec![[0, 0, 0]],
        )
        .expect("built-in palette is valid")
    }

    pub fn classes(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn ignore_colors(&self) -> &[[u8; 3]] {
        &self.ignore_colors
    }

    pub fn color(&self, class: ClassId) -> [u8; 3] {
        self.entries[class as usize].rgb
    }

    pub fn name(&self, class: ClassId) -> &str {
        &self.entries[class as usize].name
    }

    pub fn index_of_name(&self, name: &str) -> Option<ClassId> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.index)
    }

    /// Parses `index R G B name` lines; `ignore R G B` declares an ignore color.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut ignore = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: &str| Error::format("palette", format!("line {}: {msg}", lineno + 1));
            if fields.len() < 4 {
                return Err(bad("expected `index R G B name` or `ignore R G B`"));
            }
            let mut rgb = [0u8; 3];
            for (k, f) in fields[1..4].iter().enumerate() {
                rgb[k] = f.parse().map_err(|_| bad("color components must be 0..255"))?;
            }
            if fields[0] == "ignore" {
                ignore.push(rgb);
                continue;
            }
            let index: ClassId = fields[0].parse().map_err(|_| bad("bad class index"))?;
            let name = fields.get(4).ok_or_else(|| bad("missing class name"))?.to_string();
            entries.push(PaletteEntry { index, rgb, name });
        }
        ClassPalette::new(entries, ignore)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!("{} {} {} {} {}\n", e.index, e.rgb[0], e.rgb[1], e.rgb[2], e.name));
        }
        for c in &self.ignore_colors {
            s.push_str(&format!("ignore {} {} {}\n", c[0], c[1], c[2]));
        }
        s
    }

    fn lookup(&self) -> HashMap<[u8; 3], Option<ClassId>> {
        let mut m: HashMap<_, _> = self.entries.iter().map(|e| (e.rgb, Some(e.index))).collect();
        for c in &self.ignore_colors {
            m.insert(*c, None);
        }
        m
    }
}

/// Converts a color label raster into class indices; ignore colors become masked pixels.
pub fn encode_labels(raster: &RgbImage, palette: &ClassPalette) -> Result<LabelGrid> {
    let lookup = palette.lookup();
    let (w, h) = raster.dimensions();
    let mut labels = Vec::with_capacity((w * h) as usize);
    let mut ignore = Vec::with_capacity((w * h) as usize);
    for (x, y, px) in raster.enumerate_pixels() {
        match lookup.get(&px.0) {
            Some(Some(c)) => {
                labels.push(*c);
                ignore.push(false);
            }
            Some(None) => {
                labels.push(0);
                ignore.push(true);
            }
            None => return Err(Error::UnknownColor { x, y, rgb: px.0 }),
        }
    }
    let grid = LabelGrid::new(w as usize, h as usize, labels)?;
    if ignore.iter().any(|&b| b) {
        grid.with_ignore(ignore)
    } else {
        Ok(grid)
    }
}

/// Renders labels with palette colors; ignored pixels use the first ignore color (black if none).
pub fn render_labels(grid: &LabelGrid, palette: &ClassPalette) -> RgbImage {
    let void = palette.ignore_colors.first().copied().unwrap_or([0, 0, 0]);
    RgbImage::from_fn(grid.width as u32, grid.height as u32, |x, y| {
        let i = y as usize * grid.width + x as usize;
        if grid.is_ignored(i) {
            image::Rgb(void)
        } else {
            image::Rgb(palette.color(grid.labels[i]))
        }
    })
}
