//! `key = value` run configuration.
//!
//! Files hold one assignment per line; `#` starts a comment. Command-line
//! `--set key=value` assignments are applied after the file. Unknown keys and
//! malformed values are usage errors.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use acseg::crf::default_lambda_grid;
use acseg::features2d::{FeatureConfig2D, FeatureGroups};
use acseg::features3d::FeatureConfig3D;
use acseg::gbdt::GbdtConfig;
use acseg::stacking::StackConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// `None` picks the modality default (3 for images, 2 for clouds).
    pub stages: Option<usize>,
    /// `None` picks the modality default (4 for images, 1 for clouds).
    pub folds: Option<usize>,
    pub seed: u64,
    pub samples_per_item: usize,
    pub threads: usize,
    pub palette: Option<PathBuf>,
    pub gbdt: GbdtConfig,
    pub crf_tune: bool,
    pub crf_lambda_grid: Vec<f64>,
    pub crf_k: usize,
    pub groups: FeatureGroups,
    pub f3d: FeatureConfig3D,
    pub synth_noise_sigma: f64,
    pub synth_texture_amplitude: f64,
    pub synth_color_jitter: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = acseg::synth::FacadeSpec::default();
        RunConfig {
            stages: None,
            folds: None,
            seed: 0,
            samples_per_item: 0,
            threads: 0,
            palette: None,
            gbdt: GbdtConfig::default(),
            crf_tune: true,
            crf_lambda_grid: default_lambda_grid(),
            crf_k: 4,
            groups: FeatureGroups::default(),
            f3d: FeatureConfig3D::default(),
            synth_noise_sigma: spec.noise_sigma,
            synth_texture_amplitude: spec.texture_amplitude,
            synth_color_jitter: spec.color_jitter,
        }
    }
}

pub const KEYS: &[&str] = &[
    "stages",
    "folds",
    "seed",
    "samples_per_item",
    "threads",
    "palette",
    "gbdt.rounds",
    "gbdt.max_depth",
    "gbdt.shrinkage",
    "gbdt.subsample",
    "gbdt.bins",
    "gbdt.l2",
    "gbdt.min_child_hessian",
    "gbdt.class_balanced",
    "gbdt.early_stop_rounds",
    "gbdt.early_stop_tolerance",
    "crf.tune",
    "crf.lambda_grid",
    "crf.k",
    "features.filters",
    "features.row_col_averages",
    "features.location_color",
    "features.hog",
    "features.lbp",
    "features3d.k",
    "features3d.spin_radius",
    "features3d.spin_bins",
    "features3d.ground_fraction",
    "features3d.ransac_iterations",
    "features3d.ransac_threshold",
    "synth.noise_sigma",
    "synth.texture_amplitude",
    "synth.color_jitter",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| CliError::Usage(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Usage(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "stages" => self.stages = if v == "auto" { None } else { Some(parse(key, v)?) },
            "folds" => self.folds = if v == "auto" { None } else { Some(parse(key, v)?) },
            "seed" => self.seed = parse(key, v)?,
            "samples_per_item" => self.samples_per_item = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "palette" => self.palette = if v == "builtin" { None } else { Some(PathBuf::from(v)) },
            "gbdt.rounds" => self.gbdt.rounds = parse(key, v)?,
            "gbdt.max_depth" => self.gbdt.max_depth = parse(key, v)?,
            "gbdt.shrinkage" => self.gbdt.shrinkage = parse(key, v)?,
            "gbdt.subsample" => self.gbdt.subsample = parse(key, v)?,
            "gbdt.bins" => self.gbdt.bins = parse(key, v)?,
            "gbdt.l2" => self.gbdt.l2 = parse(key, v)?,
            "gbdt.min_child_hessian" => self.gbdt.min_child_hessian = parse(key, v)?,
            "gbdt.class_balanced" => self.gbdt.class_balanced = parse_bool(key, v)?,
            "gbdt.early_stop_rounds" => self.gbdt.early_stop_rounds = parse(key, v)?,
            "gbdt.early_stop_tolerance" => self.gbdt.early_stop_tolerance = parse(key, v)?,
            "crf.tune" => self.crf_tune = parse_bool(key, v)?,
            "crf.lambda_grid" => {
                self.crf_lambda_grid = v.split(',').map(|x| parse(key, x.trim())).collect::<Result<_, _>>()?;
                if self.crf_lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                    return Err(CliError::Usage("crf.lambda_grid values must be finite and non-negative".into()));
                }
            }
            "crf.k" => self.crf_k = parse(key, v)?,
            "features.filters" => self.groups.filters = parse_bool(key, v)?,
            "features.row_col_averages" => self.groups.row_col_averages = parse_bool(key, v)?,
            "features.location_color" => self.groups.location_color = parse_bool(key, v)?,
            "features.hog" => self.groups.hog = parse_bool(key, v)?,
            "features.lbp" => self.groups.lbp = parse_bool(key, v)?,
            "features3d.k" => self.f3d.k = parse(key, v)?,
            "features3d.spin_radius" => self.f3d.spin_radius = parse(key, v)?,
            "features3d.spin_bins" => {
                self.f3d.spin_bins = parse(key, v)?;
                self.f3d.dim = self.f3d.dim.max(self.f3d.base_dim());
            }
            "features3d.ground_fraction" => self.f3d.ground_fraction = parse(key, v)?,
            "features3d.ransac_iterations" => self.f3d.ransac.iterations = parse(key, v)?,
            "features3d.ransac_threshold" => self.f3d.ransac.threshold = parse(key, v)?,
            "synth.noise_sigma" => self.synth_noise_sigma = parse(key, v)?,
            "synth.texture_amplitude" => self.synth_texture_amplitude = parse(key, v)?,
            "synth.color_jitter" => self.synth_color_jitter = parse(key, v)?,
            _ => return Err(CliError::Usage(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// File (if any) first, then each `key=value` override.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        for o in overrides {
            cfg.apply_text(o, "--set")?;
        }
        Ok(cfg)
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let g = &self.gbdt;
        let opt = |v: Option<usize>| v.map_or("auto".to_string(), |x| x.to_string());
        let values: Vec<String> = vec![
            opt(self.stages),
            opt(self.folds),
            self.seed.to_string(),
            self.samples_per_item.to_string(),
            self.threads.to_string(),
            self.palette.as_ref().map_or("builtin".into(), |p| p.display().to_string()),
            g.rounds.to_string(),
            g.max_depth.to_string(),
            g.shrinkage.to_string(),
            g.subsample.to_string(),
            g.bins.to_string(),
            g.l2.to_string(),
            g.min_child_hessian.to_string(),
            g.class_balanced.to_string(),
            g.early_stop_rounds.to_string(),
            g.early_stop_tolerance.to_string(),
            self.crf_tune.to_string(),
            join(&self.crf_lambda_grid),
            self.crf_k.to_string(),
            self.groups.filters.to_string(),
            self.groups.row_col_averages.to_string(),
            self.groups.location_color.to_string(),
            self.groups.hog.to_string(),
            self.groups.lbp.to_string(),
            self.f3d.k.to_string(),
            self.f3d.spin_radius.to_string(),
            self.f3d.spin_bins.to_string(),
            self.f3d.ground_fraction.to_string(),
            self.f3d.ransac.iterations.to_string(),
            self.f3d.ransac.threshold.to_string(),
            self.synth_noise_sigma.to_string(),
            self.synth_texture_amplitude.to_string(),
            self.synth_color_jitter.to_string(),
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn features_2d(&self) -> FeatureConfig2D {
        FeatureConfig2D { groups: self.groups, ..FeatureConfig2D::default() }
    }

    pub fn stack(&self, cloud: bool) -> StackConfig {
        let base = if cloud { StackConfig::cloud_default() } else { StackConfig::image_default() };
        StackConfig {
            stages: self.stages.unwrap_or(base.stages),
            folds: self.folds.unwrap_or(base.folds),
            seed: self.seed,
            samples_per_item: self.samples_per_item,
            gbdt: GbdtConfig { seed: self.seed, ..self.gbdt.clone() },
        }
    }
}
