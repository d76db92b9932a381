//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use acseg::crf::{build_grid_graph, build_knn_graph, smooth, tune_lambda, NeighborGraph, TuneItem};
use acseg::data::io::{
    read_labels, read_palette, read_ply, read_probmap, read_rgb, write_labels, write_palette, write_ply, write_probmap,
    write_rgb,
};
use acseg::data::palette::ClassPalette;
use acseg::data::types::{ClassId, FeatureMatrix, Geometry, LabelGrid, PointCloud, ProbMap};
use acseg::data::ModelFile;
use acseg::eval::{evaluate_run, fuse_modalities, FusionMode};
use acseg::features2d::assemble_image_features;
use acseg::features3d::point_features;
use acseg::stacking::{train_stack, ContextSource, StackItem};
use acseg::synth::{generate_cloud, generate_facade, FacadeSpec};
use acseg::Error;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn is_ply(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}

fn load_palette(cfg: &RunConfig) -> Result<ClassPalette> {
    Ok(match &cfg.palette {
        Some(p) => read_palette(p)?,
        None => ClassPalette::facade(),
    })
}

enum Entry {
    Image { stem: String, image: PathBuf, label: PathBuf },
    Cloud { stem: String, cloud: PathBuf },
}

fn require(path: &Path, stem: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingPair(format!("{stem}: {} not found", path.display())).into())
    }
}

fn read_manifest(path: &Path) -> Result<Vec<Entry>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let first = base.join(fields[0]);
        let s = stem(&first);
        match fields.len() {
            1 if is_ply(&first) => {
                require(&first, &s)?;
                entries.push(Entry::Cloud { stem: s, cloud: first });
            }
            1 => return Err(Error::MissingPair(format!("{s}: no label raster listed for {}", first.display())).into()),
            2 => {
                let label = base.join(fields[1]);
                require(&first, &s)?;
                require(&label, &s)?;
                entries.push(Entry::Image { stem: s, image: first, label });
            }
            _ => {
                return Err(CliError::Usage(format!(
                    "{}:{}: expected `image label` or `cloud.ply`",
                    path.display(),
                    n + 1
                )))
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::InvalidData(format!("manifest {} lists no items", path.display())).into());
    }
    let clouds = entries.iter().filter(|e| matches!(e, Entry::Cloud { .. })).count();
    if clouds != 0 && clouds != entries.len() {
        return Err(CliError::Usage("a manifest must list only images or only point clouds".into()));
    }
    Ok(entries)
}

/// A training item plus what the CRF tuning needs to rebuild its graph.
struct Loaded {
    item: StackItem,
    cloud: Option<PointCloud>,
}

fn load_entry(cfg: &RunConfig, palette: &ClassPalette, id: u64, entry: &Entry) -> Result<Loaded> {
    match entry {
        Entry::Image { stem, image, label } => {
            let img = read_rgb(image)?;
            let grid = read_labels(label, palette)?;
            if (grid.width, grid.height) != (img.width() as usize, img.height() as usize) {
                return Err(Error::ShapeMismatch(format!(
                    "{stem}: image is {}x{} but labels are {}x{}",
                    img.width(),
                    img.height(),
                    grid.width,
                    grid.height
                ))
                .into());
            }
            grid.validate(palette.classes())?;
            let features = assemble_image_features(&img, &cfg.features_2d(), &[])?;
            Ok(Loaded {
                item: StackItem { id, features, labels: grid.labels, ignore: grid.ignore, source: ContextSource::Image(img) },
                cloud: None,
            })
        }
        Entry::Cloud { stem, cloud } => {
            let pc = read_ply(cloud)?;
            let labels =
                pc.labels.clone().ok_or_else(|| Error::InvalidData(format!("{stem}: point cloud has no label property")))?;
            if let Some(&l) = labels.iter().find(|&&l| l as usize >= palette.classes()) {
                return Err(Error::InvalidData(format!("{stem}: label {l} exceeds the palette")).into());
            }
            let (features, _) = point_features(&pc, &cfg.f3d)?;
            Ok(Loaded {
                item: StackItem { id, features, labels, ignore: None, source: ContextSource::Cloud },
                cloud: Some(pc),
            })
        }
    }
}

fn graph_for(cfg: &RunConfig, geometry: Geometry, cloud: Option<&PointCloud>) -> Result<NeighborGraph> {
    match (geometry, cloud) {
        (Geometry::Grid { width, height }, _) => Ok(build_grid_graph(width, height)),
        (Geometry::Points(_), Some(c)) => Ok(build_knn_graph(c, cfg.crf_k)?),
        (Geometry::Points(_), None) => Err(CliError::Usage("point input needs --cloud for its neighbour graph".into())),
    }
}

pub fn train(cfg: &RunConfig, manifest: &Path, model_path: &Path, report: Option<&Path>) -> Result<()> {
    let palette = load_palette(cfg)?;
    let entries = read_manifest(manifest)?;
    let is_cloud = matches!(entries[0], Entry::Cloud { .. });

    let t = Instant::now();
    let loaded: Vec<Loaded> = entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| load_entry(cfg, &palette, i as u64, e))
        .collect::<Result<_>>()?;
    let feature_secs = t.elapsed().as_secs_f64();
    let (items, clouds): (Vec<StackItem>, Vec<Option<PointCloud>>) =
        loaded.into_iter().map(|l| (l.item, l.cloud)).unzip();

    let scfg = cfg.stack(is_cloud);
    let training = train_stack(&items, palette.classes(), &scfg)?;
    training.model.verify_no_leakage().map_err(|e| CliError::Internal(e.to_string()))?;

    let recipe = if is_cloud { cfg.f3d.describe() } else { cfg.features_2d().describe() };
    let mut model = ModelFile::new(palette, recipe, training.model)?;

    let t = Instant::now();
    let mut tuned = None;
    if cfg.crf_tune {
        let last = training.cross.last().expect("at least one stage");
        let graphs: Vec<NeighborGraph> = items
            .par_iter()
            .zip(&clouds)
            .map(|(it, c)| graph_for(cfg, it.features.geometry(), c.as_ref()))
            .collect::<Result<_>>()?;
        let tune: Vec<TuneItem> = items
            .iter()
            .zip(last)
            .zip(&graphs)
            .map(|((it, p), g)| TuneItem { probs: p, graph: g, truth: &it.labels, ignore: it.ignore.as_deref() })
            .collect();
        let choice = tune_lambda(&tune, &cfg.crf_lambda_grid)?;
        model.crf_lambda = choice.lambda;
        tuned = Some(choice);
    }
    let crf_secs = t.elapsed().as_secs_f64();
    model.save(model_path)?;

    let mut out = String::from("[config]\n");
    out.push_str(&cfg.to_text());
    let elements: usize = items.iter().map(|it| it.labels.len()).sum();
    let _ = write!(
        out,
        "\n[data]\nmodality = {}\nitems = {}\nelements = {}\nstages = {}\nfolds = {}\n\n[stages]\n",
        if is_cloud { "cloud" } else { "image" },
        items.len(),
        elements,
        scfg.stages,
        scfg.folds
    );
    for (s, acc) in model.stack.held_out_accuracy.iter().enumerate() {
        let _ = writeln!(out, "stage.{}.held_out_accuracy = {:.6}", s + 1, acc);
    }
    out.push_str("\n[crf]\n");
    match &tuned {
        Some(c) => {
            let _ = writeln!(out, "lambda = {}\naccuracy = {:.6}", c.lambda, c.accuracy);
            for (l, a) in &c.curve {
                let _ = writeln!(out, "curve.{l:.4} = {a:.6}");
            }
        }
        None => out.push_str("lambda = untuned\n"),
    }
    let _ = write!(out, "\n[timing]\nfeatures_seconds = {feature_secs:.3}\n");
    for (s, (classify, context)) in training.timings.iter().enumerate() {
        let _ = writeln!(out, "stage.{}.classify_seconds = {classify:.3}", s + 1);
        let _ = writeln!(out, "stage.{}.autocontext_seconds = {context:.3}", s + 1);
    }
    let _ = writeln!(out, "crf_tuning_seconds = {crf_secs:.3}");
    print!("{out}");
    if let Some(p) = report {
        write_text(p, &out)?;
    }
    Ok(())
}

enum CrfChoice {
    Off,
    Lambda(f64),
}

fn parse_crf(arg: Option<&str>, model: &ModelFile) -> Result<CrfChoice> {
    match arg {
        None => Ok(CrfChoice::Off),
        Some("auto") if model.crf_lambda.is_finite() => Ok(CrfChoice::Lambda(model.crf_lambda)),
        Some("auto") => Err(CliError::Usage("--crf auto: the model has no tuned lambda".into())),
        Some(v) => match v.parse::<f64>() {
            Ok(l) if l >= 0.0 && l.is_finite() => Ok(CrfChoice::Lambda(l)),
            _ => Err(CliError::Usage(format!("--crf expects a non-negative number or `auto`, got {v:?}"))),
        },
    }
}

struct PredictTiming {
    stem: String,
    features: f64,
    stages: Vec<(f64, f64)>,
    crf: f64,
}

#[allow(clippy::too_many_arguments)]
fn predict_one(
    cfg: &RunConfig,
    model: &ModelFile,
    out: &Path,
    stage: usize,
    crf: &CrfChoice,
    dump_probs: bool,
    input: &Path,
) -> Result<PredictTiming> {
    let s = stem(input);
    let t = Instant::now();
    let (features, source, cloud): (FeatureMatrix, ContextSource, Option<PointCloud>) = if is_ply(input) {
        model.check_recipe(&cfg.f3d.describe())?;
        let pc = read_ply(input)?;
        let (f, _) = point_features(&pc, &cfg.f3d)?;
        (f, ContextSource::Cloud, Some(pc))
    } else {
        model.check_recipe(&cfg.features_2d().describe())?;
        let img = read_rgb(input)?;
        let f = assemble_image_features(&img, &cfg.features_2d(), &[])?;
        (f, ContextSource::Image(img), None)
    };
    let features_secs = t.elapsed().as_secs_f64();
    let (outputs, stages) = model.stack.predict_timed(&features, &source)?;
    if dump_probs {
        for (k, p) in outputs.iter().enumerate() {
            write_probmap(&out.join(format!("{s}.s{}.probs", k + 1)), p)?;
        }
    }
    let probs = &outputs[stage - 1];
    let t = Instant::now();
    let labels: Vec<ClassId> = match crf {
        CrfChoice::Off => probs.map_labels(),
        CrfChoice::Lambda(l) => {
            let graph = graph_for(cfg, probs.geometry(), cloud.as_ref())?;
            smooth(probs, &graph, *l)?.labels
        }
    };
    let crf_secs = t.elapsed().as_secs_f64();
    write_output(out, &s, probs.geometry(), labels, cloud, &model.palette)?;
    Ok(PredictTiming { stem: s, features: features_secs, stages, crf: crf_secs })
}

fn write_output(
    out: &Path,
    stem: &str,
    geometry: Geometry,
    labels: Vec<ClassId>,
    cloud: Option<PointCloud>,
    palette: &ClassPalette,
) -> Result<()> {
    match (geometry, cloud) {
        (Geometry::Grid { width, height }, _) => {
            write_labels(&out.join(format!("{stem}.png")), &LabelGrid::new(width, height, labels)?, palette)?
        }
        (Geometry::Points(_), Some(c)) => write_ply(&out.join(format!("{stem}.ply")), &c.with_labels(labels)?)?,
        (Geometry::Points(_), None) => return Err(CliError::Internal("point output without a cloud".into())),
    }
    Ok(())
}

pub fn predict(
    cfg: &RunConfig,
    model_path: &Path,
    out: &Path,
    stage: Option<usize>,
    crf: Option<&str>,
    dump_probs: bool,
    inputs: &[PathBuf],
) -> Result<()> {
    let model = ModelFile::load(model_path)?;
    let n = model.stack.stages.len();
    let stage = stage.unwrap_or(n);
    if stage == 0 || stage > n {
        return Err(CliError::Usage(format!("stage {stage} does not exist; the model has stages 1..={n}")));
    }
    let crf = parse_crf(crf, &model)?;
    create_dir(out)?;
    let timings: Vec<PredictTiming> = inputs
        .par_iter()
        .map(|input| predict_one(cfg, &model, out, stage, &crf, dump_probs, input))
        .collect::<Result<_>>()?;
    let mut report = String::new();
    let _ = writeln!(
        report,
        "stage = {stage}\ncrf = {}",
        match crf {
            CrfChoice::Off => "off".to_string(),
            CrfChoice::Lambda(l) => l.to_string(),
        }
    );
    for t in &timings {
        let _ = write!(report, "{}: features {:.3}s", t.stem, t.features);
        for (k, (ctx, cls)) in t.stages.iter().enumerate() {
            let _ = write!(report, ", stage {} autocontext {ctx:.3}s classify {cls:.3}s", k + 1);
        }
        let _ = writeln!(report, ", crf {:.3}s", t.crf);
    }
    print!("{report}");
    Ok(())
}

pub fn eval(cfg: &RunConfig, pred: &Path, truth: &Path, report: Option<&Path>) -> Result<()> {
    let palette = load_palette(cfg)?;
    let run = evaluate_run(pred, truth, &palette)?;
    print!("{}", run.to_table());
    if let Some(p) = report {
        write_text(p, &run.to_key_values())?;
    }
    Ok(())
}

pub fn crf(cfg: &RunConfig, probs: &Path, lambda: f64, out: &Path, cloud: Option<&Path>) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(CliError::Usage(format!("--lambda must be finite and non-negative, got {lambda}")));
    }
    let palette = load_palette(cfg)?;
    let p = read_probmap(probs)?;
    if p.classes() != palette.classes() {
        return Err(Error::DimensionMismatch { expected: palette.classes(), actual: p.classes() }.into());
    }
    let cloud = cloud.map(read_ply).transpose()?;
    if let (Geometry::Points(n), Some(c)) = (p.geometry(), &cloud) {
        if c.len() != n {
            return Err(Error::ShapeMismatch(format!("probabilities cover {n} points, the cloud has {}", c.len())).into());
        }
    }
    let graph = graph_for(cfg, p.geometry(), cloud.as_ref())?;
    let r = smooth(&p, &graph, lambda)?;
    println!("initial energy = {}\nfinal energy = {}\naccepted moves = {}", r.initial_energy, r.energy, r.trace.len());
    match (p.geometry(), cloud) {
        (Geometry::Grid { width, height }, _) => write_labels(out, &LabelGrid::new(width, height, r.labels)?, &palette)?,
        (Geometry::Points(_), Some(c)) => write_ply(out, &c.with_labels(r.labels)?)?,
        (Geometry::Points(_), None) => unreachable!("graph_for rejects point input without a cloud"),
    }
    Ok(())
}

fn read_coverage(path: &Path) -> Result<Vec<bool>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| match l {
            "1" => Ok(true),
            "0" => Ok(false),
            _ => Err(Error::format("coverage file", format!("line {}: expected 0 or 1, got {l:?}", i + 1)).into()),
        })
        .collect()
}

pub fn fuse(p2d: &Path, p3d: &Path, out: &Path, mode: &str, coverage: Option<&Path>) -> Result<()> {
    let mode = match mode {
        "mean" => FusionMode::Mean,
        "product" => FusionMode::Product,
        m => return Err(CliError::Usage(format!("--mode must be `mean` or `product`, got {m:?}"))),
    };
    let a: ProbMap = read_probmap(p2d)?;
    let b: ProbMap = read_probmap(p3d)?;
    if a.len() != b.len() || a.classes() != b.classes() {
        return Err(Error::ShapeMismatch(format!(
            "{} has {} elements x {} classes, {} has {} x {}",
            p2d.display(),
            a.len(),
            a.classes(),
            p3d.display(),
            b.len(),
            b.classes()
        ))
        .into());
    }
    let cov = coverage.map(read_coverage).transpose()?;
    let fused = fuse_modalities(&a, &b, cov.as_deref(), mode)?;
    write_probmap(out, &fused)?;
    Ok(())
}

fn spec_text(spec: &FacadeSpec) -> String {
    let door = spec.door.map_or("none".to_string(), |(w, h, x)| format!("{w},{h},{x}"));
    let balconies = spec.balcony_floors.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(",");
    format!(
        "seed = {}\nwidth = {}\nheight = {}\nsky_height = {}\nroof_height = {}\nfloors = {}\nwindow_cols = {}\n\
         window_width = {}\nwindow_height = {}\nwindow_jitter = {}\ndoor = {door}\nbalcony_floors = {balconies}\n\
         balcony_height = {}\nshop = {}\nnoise_sigma = {}\ntexture_amplitude = {}\ncolor_jitter = {}\n\
         meters_per_pixel = {}\nwindow_inset = {}\nbalcony_depth = {}\nground_depth = {}\n",
        spec.seed,
        spec.width,
        spec.height,
        spec.sky_height,
        spec.roof_height,
        spec.floors,
        spec.window_cols,
        spec.window_width,
        spec.window_height,
        spec.window_jitter,
        spec.balcony_height,
        spec.shop,
        spec.noise_sigma,
        spec.texture_amplitude,
        spec.color_jitter,
        spec.meters_per_pixel,
        spec.window_inset,
        spec.balcony_depth,
        spec.ground_depth,
    )
}

pub fn synth(cfg: &RunConfig, out: &Path, count: usize, seed: u64, density: f64) -> Result<()> {
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    if !(density >= 0.0 && density.is_finite()) {
        return Err(CliError::Usage(format!("--density must be finite and non-negative, got {density}")));
    }
    let palette = ClassPalette::facade();
    let dirs = ["images", "labels", "specs"].into_iter().chain((density > 0.0).then_some("clouds"));
    for d in dirs {
        create_dir(&out.join(d))?;
    }
    let stems: Vec<String> = (0..count)
        .into_par_iter()
        .map(|i| {
            let spec = FacadeSpec {
                noise_sigma: cfg.synth_noise_sigma,
                texture_amplitude: cfg.synth_texture_amplitude,
                color_jitter: cfg.synth_color_jitter,
                ..FacadeSpec::random(seed * 1000 + i as u64)
            };
            let s = format!("facade_{i:04}");
            let (img, grid) = generate_facade(&spec)?;
            write_rgb(&out.join("images").join(format!("{s}.png")), &img)?;
            write_labels(&out.join("labels").join(format!("{s}.png")), &grid, &palette)?;
            write_text(&out.join("specs").join(format!("{s}.cfg")), &spec_text(&spec))?;
            if density > 0.0 {
                let c = generate_cloud(&spec, density)?;
                write_ply(&out.join("clouds").join(format!("{s}.ply")), &c.cloud)?;
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    write_palette(&out.join("palette.txt"), &palette)?;
    let manifest: String = stems.iter().map(|s| format!("images/{s}.png labels/{s}.png\n")).collect();
    write_text(&out.join("manifest.txt"), &manifest)?;
    if density > 0.0 {
        let clouds: String = stems.iter().map(|s| format!("clouds/{s}.ply\n")).collect();
        write_text(&out.join("manifest_clouds.txt"), &clouds)?;
    }
    println!("wrote {count} facades to {}", out.display());
    Ok(())
}
