//! File formats: RGB/label rasters (PNG), ASCII PLY point clouds, PFM float rasters
//! for extra feature channels, and binary probability-map dumps.

use std::fs;
use std::path::Path;

use image::RgbImage;

use super::codec::{ByteReader, ByteWriter};
use super::palette::{encode_labels, render_labels, ClassPalette};
use super::types::{ClassId, Geometry, LabelGrid, PointCloud, ProbMap};
use crate::error::{Error, Result};

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    Ok(img.to_rgb8())
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub fn read_labels(path: &Path, palette: &ClassPalette) -> Result<LabelGrid> {
    encode_labels(&read_rgb(path)?, palette)
}

pub fn write_labels(path: &Path, grid: &LabelGrid, palette: &ClassPalette) -> Result<()> {
    write_rgb(path, &render_labels(grid, palette))
}

pub fn read_palette(path: &Path) -> Result<ClassPalette> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ClassPalette::parse(&text)
}

pub fn write_palette(path: &Path, palette: &ClassPalette) -> Result<()> {
    fs::write(path, palette.to_text()).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// PLY
// ---------------------------------------------------------------------------

pub fn ply_to_string(cloud: &PointCloud) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    s.push_str(&format!("element vertex {}\n", cloud.len()));
    for p in ["x", "y", "z"] {
        s.push_str(&format!("property double {p}\n"));
    }
    for p in ["red", "green", "blue"] {
        s.push_str(&format!("property uchar {p}\n"));
    }
    if cloud.labels.is_some() {
        s.push_str("property int label\n");
    }
    s.push_str("end_header\n");
    for i in 0..cloud.len() {
        let p = cloud.points[i];
        let c = cloud.colors[i];
        s.push_str(&format!("{} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2]));
        if let Some(l) = &cloud.labels {
            s.push_str(&format!(" {}", l[i]));
        }
        s.push('\n');
    }
    s
}

pub fn parse_ply(text: &str) -> Result<PointCloud> {
    let bad = |msg: String| Error::format("ply", msg);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing `ply` magic".into()));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = lines.next().ok_or_else(|| bad("missing end_header".into()))?.trim();
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["end_header"] => break,
            ["format", fmt, ..] if *fmt != "ascii" => return Err(bad(format!("unsupported format {fmt}"))),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad(format!("bad vertex count {n}")))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", _ty, name] if in_vertex => props.push(name.to_string()),
            _ => {}
        }
    }
    let n = count.ok_or_else(|| bad("no vertex element".into()))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let req = |name: &str| col(name).ok_or_else(|| bad(format!("missing vertex property {name}")));
    let (ix, iy, iz) = (req("x")?, req("y")?, req("z")?);
    let (ir, ig, ib) = (req("red")?, req("green")?, req("blue")?);
    let il = col("label");

    let mut points = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(if il.is_some() { n } else { 0 });
    for k in 0..n {
        let line = lines.next().ok_or_else(|| bad(format!("expected {n} vertices, found {k}")))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < props.len() {
            return Err(bad(format!("vertex {k}: expected {} fields", props.len())));
        }
        let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad(format!("vertex {k}: bad number {}", f[j])));
        let byte = |j: usize| f[j].parse::<u8>().map_err(|_| bad(format!("vertex {k}: bad color {}", f[j])));
        points.push([num(ix)?, num(iy)?, num(iz)?]);
        colors.push([byte(ir)?, byte(ig)?, byte(ib)?]);
        if let Some(j) = il {
            labels.push(f[j].parse::<ClassId>().map_err(|_| bad(format!("vertex {k}: bad label {}", f[j])))?);
        }
    }
    let cloud = PointCloud::new(points, colors)?;
    if il.is_some() {
        cloud.with_labels(labels)
    } else {
        Ok(cloud)
    }
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text)
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, ply_to_string(cloud)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// PFM (single-channel float raster, used for extra feature channels)
// ---------------------------------------------------------------------------

/// Single-channel float raster, row-major from the top row.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatRaster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

pub fn encode_pfm(r: &FloatRaster) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", r.width, r.height).into_bytes();
    // PFM stores rows bottom to top.
    for y in (0..r.height).rev() {
        for v in &r.values[y * r.width..(y + 1) * r.width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(data: &[u8]) -> Result<FloatRaster> {
    let bad = |msg: &str| Error::format("pfm", msg.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&data[start..pos]).map_err(|_| bad("header is not ascii"))?);
    }
    pos += 1; // single whitespace byte after the scale
    if fields[0] != "Pf" {
        return Err(bad("only grayscale `Pf` rasters are supported"));
    }
    let width: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| bad("bad scale"))?;
    let little = scale < 0.0;
    let body = data.get(pos..).ok_or_else(|| bad("missing raster body"))?;
    if body.len() != width * height * 4 {
        return Err(bad("raster body has the wrong size"));
    }
    let mut values = vec![0f32; width * height];
    for (k, chunk) in body.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().unwrap();
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, x) = (k / width, k % width);
        values[(height - 1 - row) * width + x] = v;
    }
    Ok(FloatRaster { width, height, values })
}

pub fn read_pfm(path: &Path) -> Result<FloatRaster> {
    decode_pfm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_pfm(path: &Path, r: &FloatRaster) -> Result<()> {
    fs::write(path, encode_pfm(r)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Probability-map dumps
// ---------------------------------------------------------------------------

const PROB_MAGIC: &[u8; 8] = b"ACPROB01";

pub fn encode_probmap(p: &ProbMap) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(PROB_MAGIC);
    match p.geometry() {
        Geometry::Grid { width, height } => {
            w.u8(0);
            w.u64(width as u64);
            w.u64(height as u64);
        }
        Geometry::Points(n) => {
            w.u8(1);
            w.u64(n as u64);
        }
    }
    w.u32(p.classes() as u32);
    w.f64s(p.as_slice());
    w.into_inner()
}

pub fn decode_probmap(data: &[u8]) -> Result<ProbMap> {
    let mut r = ByteReader::new(data, "probability map");
    if r.bytes(8)? != PROB_MAGIC {
        return Err(Error::format("probability map", "bad magic"));
    }
    let geometry = match r.u8()? {
        0 => Geometry::Grid { width: r.u64()? as usize, height: r.u64()? as usize },
        1 => Geometry::Points(r.u64()? as usize),
        t => return Err(Error::format("probability map", format!("unknown geometry tag {t}"))),
    };
    let classes = r.u32()? as usize;
    let probs = r.f64s()?;
    r.finish()?;
    ProbMap::new(geometry, classes, probs)
}

pub fn read_probmap(path: &Path) -> Result<ProbMap> {
    decode_probmap(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_probmap(path: &Path, p: &ProbMap) -> Result<()> {
    fs::write(path, encode_probmap(p)).map_err(|e| Error::io(path, e))
}
