//! End-to-end stacking on synthetic facades.

use acseg::data::types::{ClassId, LabelGrid};
use acseg::features2d::{assemble_image_features, FeatureConfig2D};
use acseg::gbdt::GbdtConfig;
use acseg::stacking::{train_stack, ContextSource, StackConfig, StackItem};
use acseg::synth::{self, CLASSES};

fn items(seed: u64, n: usize) -> Vec<StackItem> {
    let cfg = FeatureConfig2D::default();
    synth::corpus(seed, n)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, (img, grid))| StackItem {
            id: i as u64,
            features: assemble_image_features(&img, &cfg, &[]).unwrap(),
            labels: grid.labels,
            ignore: None,
            source: ContextSource::Image(img),
        })
        .collect()
}

/// Pixels whose 4-neighbours all carry a different label.
fn isolated(labels: &[ClassId], w: usize, h: usize) -> usize {
    let g = LabelGrid::new(w, h, labels.to_vec()).unwrap();
    let mut n = 0;
    for y in 0..h {
        for x in 0..w {
            let l = g.get(x, y);
            let nb = [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)];
            n += nb.iter().filter(|&&(a, b)| a < w && b < h).all(|&(a, b)| g.get(a, b) != l) as usize;
        }
    }
    n
}

#[test]
fn later_stages_remove_isolated_pixels_on_held_out_facades() {
    let train = items(7, 12);
    let cfg = StackConfig {
        stages: 3,
        folds: 2,
        seed: 7,
        samples_per_item: 300,
        gbdt: GbdtConfig { rounds: 60, seed: 7, ..GbdtConfig::default() },
    };
    let tr = train_stack(&train, CLASSES, &cfg).unwrap();
    tr.model.verify_no_leakage().unwrap();
    let (mut first, mut third) = (0, 0);
    let (mut hit1, mut hit3, mut total) = (0, 0, 0);
    for it in items(8, 4) {
        let out = tr.model.predict(&it.features, &it.source).unwrap();
        let (m1, m3) = (out[0].map_labels(), out[2].map_labels());
        first += isolated(&m1, 64, 80);
        third += isolated(&m3, 64, 80);
        hit1 += m1.iter().zip(&it.labels).filter(|(a, b)| a == b).count();
        hit3 += m3.iter().zip(&it.labels).filter(|(a, b)| a == b).count();
        total += it.labels.len();
    }
    assert!(first > 0);
    assert!(third < first, "stage 3 has {third} isolated pixels, stage 1 has {first}");
    assert!(hit3 > hit1, "stage 3 {hit3}/{total} vs stage 1 {hit1}/{total}");
}

#[test]
fn cross_predictions_cover_every_item_and_stage() {
    let train = items(3, 6);
    let cfg = StackConfig {
        stages: 2,
        folds: 3,
        seed: 3,
        samples_per_item: 100,
        gbdt: GbdtConfig { rounds: 10, seed: 3, ..GbdtConfig::default() },
    };
    let tr = train_stack(&train, CLASSES, &cfg).unwrap();
    assert_eq!(tr.cross.len(), 2);
    assert!(tr.cross.iter().all(|c| c.len() == 6));
    assert_eq!(tr.model.held_out_accuracy.len(), 2);
    assert_eq!(tr.model.stages.iter().map(|s| s.fold_models.len()).collect::<Vec<_>>(), vec![3, 3]);
    let again = train_stack(&train, CLASSES, &cfg).unwrap();
    assert_eq!(again.model, tr.model);
}
