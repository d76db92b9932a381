//! Staged auto-context cascade trained with stacked generalization.
//!
//! Stage 1 sees data features only. Stage t > 1 sees the data features
//! followed by auto-context features computed from stage t − 1 output. During
//! training that output is a cross-prediction: each item is predicted by the
//! fold ensemble that never saw it. With one fold the full ensemble predicts
//! its own training data.

use std::time::Instant;

use image::RgbImage;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autoctx::{assemble_autocontext_2d, assemble_autocontext_3d};
use crate::data::codec::fnv1a64;
use crate::data::types::{argmax, ClassId, FeatureMatrix, Geometry, ProbMap};
use crate::error::{Error, Result};
use crate::gbdt::{train_ensemble, GbdtConfig, TrainLog, TreeEnsemble};

/// What the auto-context features are computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextKind {
    Image,
    Cloud,
}

/// Input to auto-context extraction for one item.
#[derive(Clone, Debug, PartialEq)]
pub enum ContextSource {
    Image(RgbImage),
    Cloud,
}

impl ContextSource {
    pub fn kind(&self) -> ContextKind {
        match self {
            ContextSource::Image(_) => ContextKind::Image,
            ContextSource::Cloud => ContextKind::Cloud,
        }
    }

    pub fn context(&self, p: &ProbMap) -> Result<FeatureMatrix> {
        match self {
            ContextSource::Image(img) => assemble_autocontext_2d(img, p),
            ContextSource::Cloud => assemble_autocontext_3d(p),
        }
    }
}

/// One training image or cloud with precomputed data features.
#[derive(Clone, Debug)]
pub struct StackItem {
    pub id: u64,
    pub features: FeatureMatrix,
    pub labels: Vec<ClassId>,
    pub ignore: Option<Vec<bool>>,
    pub source: ContextSource,
}

impl StackItem {
    fn is_ignored(&self, i: usize) -> bool {
        self.ignore.as_ref().is_some_and(|m| m[i])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackConfig {
    pub stages: usize,
    pub folds: usize,
    pub seed: u64,
    /// Training elements drawn per item and stage; 0 uses every labelled element.
    pub samples_per_item: usize,
    pub gbdt: GbdtConfig,
}

impl StackConfig {
    pub fn image_default() -> Self {
        StackConfig { stages: 3, folds: 4, seed: 0, samples_per_item: 0, gbdt: GbdtConfig::default() }
    }

    pub fn cloud_default() -> Self {
        StackConfig { stages: 2, folds: 1, ..Self::image_default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::InvalidConfig("stages must be at least 1".into()));
        }
        if self.folds == 0 {
            return Err(Error::InvalidConfig("folds must be at least 1".into()));
        }
        self.gbdt.validate()
    }
}

/// Ensembles of one stage. `fold_models` is empty when M = 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub fold_models: Vec<TreeEnsemble>,
    pub full: TreeEnsemble,
    /// Sorted training item IDs of each fold ensemble.
    pub fold_train_ids: Vec<Vec<u64>>,
    pub fold_fingerprints: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackModel {
    pub classes: usize,
    pub folds: usize,
    pub context: ContextKind,
    /// Fingerprint of the data feature channel names.
    pub data_fingerprint: u64,
    pub data_dim: usize,
    /// `(item id, fold)` for every training item.
    pub assignment: Vec<(u64, u32)>,
    /// Accuracy of each stage's cross-predictions on the training items.
    pub held_out_accuracy: Vec<f64>,
    pub stages: Vec<Stage>,
}

/// Training result: the model plus the per-stage cross-predictions
/// (`cross[stage][item]`) and boosting logs.
#[derive(Clone, Debug)]
pub struct StackTraining {
    pub model: StackModel,
    pub cross: Vec<Vec<ProbMap>>,
    pub logs: Vec<Vec<TrainLog>>,
    /// Wall-clock seconds per stage: ensemble training and cross-prediction,
    /// then auto-context extraction for the next stage.
    pub timings: Vec<(f64, f64)>,
}

pub fn channel_fingerprint(names: &[String]) -> u64 {
    fnv1a64(names.join("\n").as_bytes())
}

pub fn id_fingerprint(ids: &[u64]) -> u64 {
    let bytes: Vec<u8> = ids.iter().flat_map(|i| i.to_le_bytes()).collect();
    fnv1a64(&bytes)
}

/// Shuffled near-equal partition of `items` indices into `folds` folds;
/// returns the fold of every item.
pub fn split_folds(items: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds == 0 || items < folds {
        return Err(Error::TooFewItems { items, folds });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = sample(&mut rng, items, items).into_vec();
    let mut fold_of = vec![0; items];
    let (base, extra) = (items / folds, items % folds);
    let mut pos = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        for &i in &order[pos..pos + size] {
            fold_of[i] = f;
        }
        pos += size;
    }
    Ok(fold_of)
}

fn sample_indices(item: &StackItem, k: usize, seed: u64) -> Vec<usize> {
    let eligible: Vec<usize> = (0..item.labels.len()).filter(|&i| !item.is_ignored(i)).collect();
    if k == 0 || k >= eligible.len() {
        return eligible;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ item.id.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut picked: Vec<usize> = sample(&mut rng, eligible.len(), k).into_iter().map(|j| eligible[j]).collect();
    picked.sort_unstable();
    picked
}

fn stage_input(data: &FeatureMatrix, ctx: Option<&FeatureMatrix>) -> Result<FeatureMatrix> {
    match ctx {
        Some(c) => FeatureMatrix::concat(&[data, c]),
        None => Ok(data.clone()),
    }
}

fn gather_rows(x: &FeatureMatrix, idx: &[usize], out: &mut Vec<f64>) {
    for &i in idx {
        out.extend_from_slice(x.row(i));
    }
}

struct StageRows {
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: Vec<Vec<ClassId>>,
}

impl StageRows {
    fn training_set(&self, members: &[usize]) -> Result<(FeatureMatrix, Vec<ClassId>)> {
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for &m in members {
            values.extend_from_slice(&self.rows[m]);
            labels.extend_from_slice(&self.labels[m]);
        }
        let x = FeatureMatrix::new(Geometry::Points(labels.len()), self.names.clone(), values)?;
        Ok((x, labels))
    }
}

fn check_items(items: &[StackItem], classes: usize) -> Result<(ContextKind, Vec<String>)> {
    let first = items.first().ok_or(Error::TooFewItems { items: 0, folds: 1 })?;
    let names = first.features.channel_names().to_vec();
    let kind = first.source.kind();
    let mut ids: Vec<u64> = items.iter().map(|it| it.id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != items.len() {
        return Err(Error::InvalidData("training item IDs must be unique".into()));
    }
    for it in items {
        if it.features.channel_names() != names.as_slice() {
            return Err(Error::InvalidData(format!("item {} has a different feature layout", it.id)));
        }
        if it.source.kind() != kind {
            return Err(Error::InvalidData("items mix images and point clouds".into()));
        }
        if it.labels.len() != it.features.len() {
            return Err(Error::DimensionMismatch { expected: it.features.len(), actual: it.labels.len() });
        }
        if let Some(m) = &it.ignore {
            if m.len() != it.labels.len() {
                return Err(Error::DimensionMismatch { expected: it.labels.len(), actual: m.len() });
            }
        }
        if let Some(i) = (0..it.labels.len()).find(|&i| !it.is_ignored(i) && it.labels[i] as usize >= classes) {
            return Err(Error::InvalidData(format!("item {} element {i} has label {} >= {classes}", it.id, it.labels[i])));
        }
    }
    Ok((kind, names))
}

/// Trains all stages. Fold ensembles within a stage train in parallel.
pub fn train_stack(items: &[StackItem], classes: usize, cfg: &StackConfig) -> Result<StackTraining> {
    cfg.validate()?;
    let (context, data_names) = check_items(items, classes)?;
    let n = items.len();
    let fold_of = split_folds(n, cfg.folds, cfg.seed)?;
    let fold_members: Vec<Vec<usize>> = (0..cfg.folds).map(|f| (0..n).filter(|&i| fold_of[i] != f).collect()).collect();
    let all: Vec<usize> = (0..n).collect();

    let mut contexts: Vec<Option<FeatureMatrix>> = vec![None; n];
    let mut stages = Vec::with_capacity(cfg.stages);
    let mut cross_all = Vec::with_capacity(cfg.stages);
    let mut logs = Vec::with_capacity(cfg.stages);
    let mut held_out = Vec::with_capacity(cfg.stages);
    let mut timings = Vec::with_capacity(cfg.stages);

    for t in 0..cfg.stages {
        let clock = Instant::now();
        let stage_seed = cfg.seed.wrapping_add(t as u64 * 7919);
        let per_item: Vec<(Vec<f64>, Vec<ClassId>, Vec<String>)> = items
            .par_iter()
            .zip(contexts.par_iter())
            .map(|(it, ctx)| {
                let x = stage_input(&it.features, ctx.as_ref())?;
                let idx = sample_indices(it, cfg.samples_per_item, stage_seed);
                let mut rows = Vec::with_capacity(idx.len() * x.dim());
                gather_rows(&x, &idx, &mut rows);
                let labels = idx.iter().map(|&i| it.labels[i]).collect();
                Ok((rows, labels, x.channel_names().to_vec()))
            })
            .collect::<Result<_>>()?;
        let names = per_item[0].2.clone();
        let (rows, labels): (Vec<_>, Vec<_>) = per_item.into_iter().map(|(r, l, _)| (r, l)).unzip();
        let stage_rows = StageRows { names, rows, labels };

        let gcfg = GbdtConfig { seed: cfg.gbdt.seed.wrapping_add(t as u64), ..cfg.gbdt.clone() };
        let train = |members: &[usize]| -> Result<(TreeEnsemble, TrainLog)> {
            let (x, y) = stage_rows.training_set(members)?;
            train_ensemble(&x, &y, None, classes, &gcfg)
        };
        let fold_results: Vec<(TreeEnsemble, TrainLog)> = if cfg.folds > 1 {
            fold_members.par_iter().map(|m| train(m)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let (full, full_log) = train(&all)?;

        let (fold_models, mut stage_logs): (Vec<_>, Vec<_>) = fold_results.into_iter().unzip();
        stage_logs.push(full_log);
        let cross: Vec<ProbMap> = items
            .par_iter()
            .zip(contexts.par_iter())
            .zip(fold_of.par_iter())
            .map(|((it, ctx), &f)| {
                let model = if cfg.folds > 1 { &fold_models[f] } else { &full };
                model.predict_proba(&stage_input(&it.features, ctx.as_ref())?)
            })
            .collect::<Result<_>>()?;

        let (mut correct, mut total) = (0usize, 0usize);
        for (it, p) in items.iter().zip(&cross) {
            for i in (0..it.labels.len()).filter(|&i| !it.is_ignored(i)) {
                total += 1;
                correct += usize::from(argmax(p.row(i)) == it.labels[i]);
            }
        }
        held_out.push(if total == 0 { 0.0 } else { correct as f64 / total as f64 });
        log::info!("stage {}: cross-prediction accuracy {:.4}", t + 1, held_out[t]);

        let classify_secs = clock.elapsed().as_secs_f64();
        if t + 1 < cfg.stages {
            contexts = items
                .par_iter()
                .zip(cross.par_iter())
                .map(|(it, p)| it.source.context(p).map(Some))
                .collect::<Result<_>>()?;
        }
        timings.push((classify_secs, clock.elapsed().as_secs_f64() - classify_secs));

        let fold_train_ids: Vec<Vec<u64>> = if cfg.folds > 1 {
            fold_members
                .iter()
                .map(|m| {
                    let mut ids: Vec<u64> = m.iter().map(|&i| items[i].id).collect();
                    ids.sort_unstable();
                    ids
                })
                .collect()
        } else {
            Vec::new()
        };
        let fold_fingerprints = fold_train_ids.iter().map(|ids| id_fingerprint(ids)).collect();
        stages.push(Stage { fold_models, full, fold_train_ids, fold_fingerprints });
        cross_all.push(cross);
        logs.push(stage_logs);
    }

    let model = StackModel {
        classes,
        folds: cfg.folds,
        context,
        data_fingerprint: channel_fingerprint(&data_names),
        data_dim: data_names.len(),
        assignment: items.iter().zip(&fold_of).map(|(it, &f)| (it.id, f as u32)).collect(),
        held_out_accuracy: held_out,
        stages,
    };
    Ok(StackTraining { model, cross: cross_all, logs, timings })
}

impl StackModel {
    /// Checks that no fold ensemble was trained on an item it cross-predicts
    /// and that the stored ID-set fingerprints match. Vacuous for M = 1.
    pub fn verify_no_leakage(&self) -> Result<()> {
        if self.folds == 1 {
            return Ok(());
        }
        for (t, stage) in self.stages.iter().enumerate() {
            if stage.fold_train_ids.len() != self.folds || stage.fold_fingerprints.len() != self.folds {
                return Err(Error::InvalidData(format!("stage {} has incomplete fold records", t + 1)));
            }
            for (f, ids) in stage.fold_train_ids.iter().enumerate() {
                if id_fingerprint(ids) != stage.fold_fingerprints[f] {
                    return Err(Error::InvalidData(format!("stage {} fold {f}: training set fingerprint mismatch", t + 1)));
                }
            }
            for &(id, f) in &self.assignment {
                if stage.fold_train_ids[f as usize].binary_search(&id).is_ok() {
                    return Err(Error::InvalidData(format!(
                        "stage {}: item {id} is cross-predicted by fold {f} which trained on it",
                        t + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Per-stage outputs ST1..STn for one item.
    pub fn predict(&self, features: &FeatureMatrix, source: &ContextSource) -> Result<Vec<ProbMap>> {
        self.predict_timed(features, source).map(|(out, _)| out)
    }

    /// As [`StackModel::predict`], plus seconds per stage spent on auto-context
    /// extraction and on classification.
    pub fn predict_timed(&self, features: &FeatureMatrix, source: &ContextSource) -> Result<(Vec<ProbMap>, Vec<(f64, f64)>)> {
        let fp = channel_fingerprint(features.channel_names());
        if fp != self.data_fingerprint {
            return Err(Error::FingerprintMismatch { model: self.data_fingerprint, extractor: fp });
        }
        if source.kind() != self.context {
            return Err(Error::InvalidData(format!("model expects {:?} input", self.context)));
        }
        let mut out: Vec<ProbMap> = Vec::with_capacity(self.stages.len());
        let mut timings = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let clock = Instant::now();
            let ctx = match out.last() {
                Some(p) => Some(source.context(p)?),
                None => None,
            };
            let ctx_secs = clock.elapsed().as_secs_f64();
            out.push(stage.full.predict_proba(&stage_input(features, ctx.as_ref())?)?);
            timings.push((ctx_secs, clock.elapsed().as_secs_f64() - ctx_secs));
        }
        Ok((out, timings))
    }
}

pub fn predict_stack(model: &StackModel, features: &FeatureMatrix, source: &ContextSource) -> Result<Vec<ProbMap>> {
    model.predict(features, source)
}

/// Rebuilds the stage-`stage` context of item `index` from the stage − 1
/// full ensemble (which trained on the item) and reports whether it differs
/// from the context the stack actually trained on.
pub fn leakage_probe(training: &StackTraining, items: &[StackItem], index: usize, stage: usize) -> Result<bool> {
    if stage < 1 || stage >= training.model.stages.len() {
        return Err(Error::InvalidConfig(format!("probe stage must lie in 1..{}", training.model.stages.len())));
    }
    let it = &items[index];
    let mut ctx = None;
    for t in 0..stage - 1 {
        ctx = Some(it.source.context(&training.cross[t][index])?);
    }
    let leaked = training.model.stages[stage - 1].full.predict_proba(&stage_input(&it.features, ctx.as_ref())?)?;
    let stored = it.source.context(&training.cross[stage - 1][index])?;
    Ok(it.source.context(&leaked)? != stored)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_sizes() {
        let sizes = |n, m| {
            let f = split_folds(n, m, 1).unwrap();
            let mut s = vec![0; m];
            f.iter().for_each(|&k| s[k] += 1);
            s
        };
        assert_eq!(sizes(104, 4), vec![26; 4]);
        assert_eq!(sizes(10, 4), vec![3, 3, 2, 2]);
        assert_eq!(sizes(7, 1), vec![7]);
        assert!(matches!(split_folds(3, 4, 0), Err(Error::TooFewItems { .. })));
        assert_eq!(split_folds(50, 5, 9).unwrap(), split_folds(50, 5, 9).unwrap());
    }

    fn toy_items(n: usize) -> Vec<StackItem> {
        (0..n)
            .map(|k| {
                let m = 30;
                let xs: Vec<f64> = (0..m).map(|i| ((i * 7 + k * 3) % 30) as f64 / 30.0).collect();
                let labels = xs.iter().map(|&x| ClassId::from(x > 0.5)).collect();
                StackItem {
                    id: 100 + k as u64,
                    features: FeatureMatrix::new(Geometry::Points(m), vec!["x".into()], xs).unwrap(),
                    labels,
                    ignore: None,
                    source: ContextSource::Cloud,
                }
            })
            .collect()
    }

    fn small_cfg(stages: usize, folds: usize) -> StackConfig {
        StackConfig { stages, folds, gbdt: GbdtConfig { rounds: 20, ..GbdtConfig::default() }, ..StackConfig::image_default() }
    }

    #[test]
    fn single_stage_equals_base_classifier() {
        let items = toy_items(4);
        let tr = train_stack(&items, 2, &small_cfg(1, 1)).unwrap();
        let x = FeatureMatrix::new(
            Geometry::Points(120),
            vec!["x".into()],
            items.iter().flat_map(|it| it.features.as_slice().to_vec()).collect(),
        )
        .unwrap();
        let y: Vec<ClassId> = items.iter().flat_map(|it| it.labels.clone()).collect();
        let (base, _) = train_ensemble(&x, &y, None, 2, &small_cfg(1, 1).gbdt).unwrap();
        let out = tr.model.predict(&items[0].features, &items[0].source).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0], base.predict_proba(&items[0].features).unwrap());
    }

    #[test]
    fn fold_models_exclude_their_items() {
        let items = toy_items(8);
        let tr = train_stack(&items, 2, &small_cfg(2, 4)).unwrap();
        tr.model.verify_no_leakage().unwrap();
        let mut bad = tr.model.clone();
        let (id, f) = bad.assignment[0];
        bad.stages[1].fold_train_ids[f as usize].push(id);
        bad.stages[1].fold_train_ids[f as usize].sort_unstable();
        assert!(bad.verify_no_leakage().is_err());
        assert_eq!(tr.model.predict(&items[1].features, &items[1].source).unwrap().len(), 2);
    }

    #[test]
    fn fingerprint_mismatch_is_rejected() {
        let items = toy_items(4);
        let tr = train_stack(&items, 2, &small_cfg(1, 1)).unwrap();
        let other = FeatureMatrix::new(Geometry::Points(2), vec!["y".into()], vec![0.0, 1.0]).unwrap();
        assert!(matches!(tr.model.predict(&other, &ContextSource::Cloud), Err(Error::FingerprintMismatch { .. })));
    }
}
