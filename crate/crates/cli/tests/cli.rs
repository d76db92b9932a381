use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use acseg::data::io::read_labels;
use acseg::data::palette::ClassPalette;
use acseg::data::types::LabelGrid;

fn acseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acseg")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = acseg(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--set",
    "gbdt.rounds=60",
    "--set",
    "folds=2",
    "--set",
    "samples_per_item=300",
    "--set",
    "crf.lambda_grid=0.1,0.5,2",
];

/// Synthetic training corpus, a small three-stage model trained on it and
/// five held-out images, shared by the tests.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    model: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let corpus = root.join("corpus");
        ok(&["synth", "--out", s(&corpus), "--count", "12", "--seed", "7", "--density", "20"]);
        ok(&["synth", "--out", s(&root.join("heldout")), "--count", "5", "--seed", "8", "--density", "0"]);
        let model = root.join("model.bin");
        let manifest = corpus.join("manifest.txt");
        let mut args = vec!["train", "--manifest", s(&manifest), "--model", s(&model)];
        args.extend_from_slice(SMALL);
        let report = root.join("train.txt");
        args.extend_from_slice(&["--report", s(&report)]);
        ok(&args);
        Fixture { _dir: dir, root, model }
    })
}

fn images(f: &Fixture) -> Vec<String> {
    (0..5).map(|i| s(&f.root.join(format!("heldout/images/facade_{i:04}.png"))).to_string()).collect()
}

fn predict(f: &Fixture, out: &str, extra: &[&str]) -> PathBuf {
    let dir = f.root.join(out);
    let mut args = vec!["predict", "--model", s(&f.model), "--out", s(&dir)];
    args.extend_from_slice(extra);
    let imgs = images(f);
    args.extend(imgs.iter().map(String::as_str));
    ok(&args);
    dir
}

fn isolated_pixels(g: &LabelGrid) -> usize {
    let (w, h) = (g.width, g.height);
    let mut n = 0;
    for y in 0..h {
        for x in 0..w {
            let l = g.get(x, y);
            let nb = [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)];
            if nb.iter().filter(|&&(a, b)| a < w && b < h).all(|&(a, b)| g.get(a, b) != l) {
                n += 1;
            }
        }
    }
    n
}

fn read_dir_labels(dir: &Path) -> Vec<LabelGrid> {
    (0..5).map(|i| read_labels(&dir.join(format!("facade_{i:04}.png")), &ClassPalette::facade()).unwrap()).collect()
}

#[test]
fn synth_writes_a_complete_corpus() {
    let f = fixture();
    let c = f.root.join("corpus");
    for sub in ["images", "labels", "clouds", "specs"] {
        assert_eq!(std::fs::read_dir(c.join(sub)).unwrap().count(), 12, "{sub}");
    }
    let manifest = std::fs::read_to_string(c.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().next(), Some("images/facade_0000.png labels/facade_0000.png"));
    let spec = std::fs::read_to_string(c.join("specs/facade_0000.cfg")).unwrap();
    assert!(spec.contains("seed = 7000"));
    let report = std::fs::read_to_string(f.root.join("train.txt")).unwrap();
    for key in ["stage.3.held_out_accuracy", "stage.1.classify_seconds", "crf_tuning_seconds", "gbdt.rounds = 60"] {
        assert!(report.contains(key), "{key}");
    }
}

#[test]
fn crf_zero_equals_map_and_stage_three_is_cleaner() {
    let f = fixture();
    let plain = read_dir_labels(&predict(f, "plain", &[]));
    let zero = read_dir_labels(&predict(f, "zero", &["--crf", "0"]));
    assert_eq!(plain, zero);
    let first = read_dir_labels(&predict(f, "first", &["--stage", "1"]));
    let a: usize = first.iter().map(isolated_pixels).sum();
    let b: usize = plain.iter().map(isolated_pixels).sum();
    assert!(b <= a, "stage 3 has {b} isolated pixels, stage 1 has {a}");
    let tuned = read_dir_labels(&predict(f, "auto", &["--crf", "auto", "--dump-probs"]));
    assert_eq!(tuned.len(), 5);
    assert!(f.root.join("auto/facade_0000.s3.probs").is_file());
}

#[test]
fn eval_of_truth_against_itself_is_perfect() {
    let f = fixture();
    let labels = f.root.join("corpus/labels");
    let report = f.root.join("eval.txt");
    ok(&["eval", "--pred", s(&labels), "--truth", s(&labels), "--report", s(&report)]);
    let kv = std::fs::read_to_string(report).unwrap();
    assert!(kv.lines().any(|l| l == "overall=1.000000"), "{kv}");
}

#[test]
fn crf_subcommand_lowers_energy_of_a_dump() {
    let f = fixture();
    let dir = predict(f, "dump", &["--dump-probs"]);
    let out = ok(&["crf", "--probs", s(&dir.join("facade_0001.s1.probs")), "--lambda", "1", "--out", s(&f.root.join("c.png"))]);
    let energy = |key: &str| -> f64 {
        out.lines().find_map(|l| l.strip_prefix(key)).unwrap().trim().parse().unwrap()
    };
    assert!(energy("final energy =") <= energy("initial energy ="));
    assert!(f.root.join("c.png").is_file());
}

#[test]
fn usage_errors_exit_one() {
    let f = fixture();
    let img = images(f).remove(0);
    let out = acseg(&["predict", "--model", s(&f.model), "--out", s(&f.root.join("bad")), "--stage", "4", &img]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage 4"));
    let out = acseg(&["synth", "--out", s(&f.root.join("x")), "--set", "gbdt.depth=3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gbdt.depth"));
    assert_eq!(acseg(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(f.root.join("heldout/images/facade_0000.png"), dir.path().join("a.png")).unwrap();
    std::fs::write(dir.path().join("m.txt"), "a.png labels/a.png\n").unwrap();
    let out = acseg(&["train", "--manifest", s(&dir.path().join("m.txt")), "--model", s(&dir.path().join("m.bin"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("a: "));

    let probs = predict(f, "fuse", &["--dump-probs"]);
    let cloud_model = f.root.join("cloud.bin");
    ok(&[
        "train",
        "--manifest",
        s(&f.root.join("corpus/manifest_clouds.txt")),
        "--model",
        s(&cloud_model),
        "--set",
        "gbdt.rounds=5",
        "--set",
        "crf.tune=false",
    ]);
    let cloud_out = f.root.join("cloud_pred");
    ok(&[
        "predict",
        "--model",
        s(&cloud_model),
        "--out",
        s(&cloud_out),
        "--dump-probs",
        s(&f.root.join("corpus/clouds/facade_0000.ply")),
    ]);
    assert!(cloud_out.join("facade_0000.ply").is_file());
    let out = acseg(&[
        "fuse",
        "--p2d",
        s(&probs.join("facade_0000.s1.probs")),
        "--p3d",
        s(&cloud_out.join("facade_0000.s2.probs")),
        "--out",
        s(&f.root.join("fused.probs")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape mismatch"));

    let img = images(f).remove(0);
    let out = acseg(&["predict", "--model", s(&cloud_model), "--out", s(&f.root.join("mm")), &img]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("feature recipe"));
}
