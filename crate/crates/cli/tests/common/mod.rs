#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn siamte(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_siamte"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn siamte")
}

pub fn ok(args: &[&str]) -> Output {
    let out = siamte(args);
    assert!(
        out.status.success(),
        "siamte {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub const SYNTH: &str = r#"
seed = 5
images_per_camera = 6
width = 48
height = 48
pristine_images = 50

[[profiles]]
name = "cam_a"
prnu_strength = 0.02
shot_noise = 0.1
read_noise = 4.0
noise_angle_deg = 0.0
noise_elongation = 3.0
channel_correlation = 0.2
channel_gains = [1.0, 1.0, 1.0]
gamma = 2.2
jpeg_quality = 95

[[profiles]]
name = "cam_b"
prnu_strength = 0.02
shot_noise = 0.1
read_noise = 4.0
noise_angle_deg = 90.0
noise_elongation = 0.0
channel_correlation = 0.8
channel_gains = [1.04, 1.0, 0.95]
gamma = 1.8
jpeg_quality = 91
"#;

pub const TRAIN: &str = r#"
[data]
val_fraction = 0.34
test_fraction = 0.34
patch_size = 16

[model]
eraser_depth = 3
eraser_width = 4
classifier_width = 2

[optim]
group_size = 2
groups_per_batch = 2
steps = 3
checkpoint_every = 1
learning_rate = 1e-3

[optim.classifier]
steps = 4
batch_size = 4
eval_every = 2
val_patches_per_camera = 2
"#;

/// Every file below `root` except run manifests, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let name = p.file_name().unwrap().to_string_lossy();
                if name == "run_manifest.json" || name.ends_with(".run.json") {
                    continue;
                }
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Runs every subcommand once, writing below `work`. The corpus is read from
/// `corpus` and `pristine` so that absolute paths in manifests agree between
/// runs.
pub fn full_pipeline(corpus: &Path, pristine: &Path, work: &Path) {
    let cfg = work.join("train.toml");
    fs::create_dir_all(work).unwrap();
    fs::write(&cfg, TRAIN).unwrap();
    let splits = work.join("splits");
    ok(&["scan", "--root", s(corpus), "--config", s(&cfg), "--out", s(&splits)]);
    let clf = work.join("clf");
    ok(&["train-classifier", "--config", s(&cfg), "--data", s(corpus), "--out", s(&clf)]);
    let clf_ckpt = clf.join("classifier.ckpt");
    let run = work.join("run");
    ok(&["train", "--config", s(&cfg), "--data", s(corpus), "--classifier", s(&clf_ckpt), "--out", s(&run)]);
    let eraser = run.join("eraser.ckpt");
    let test = splits.join("test.json");
    ok(&["erase", "--in", s(&test), "--ckpt", s(&eraser), "--out", s(&work.join("erased"))]);
    ok(&["attack", "--method", "mf3", "--in", s(&test), "--out", s(&work.join("mf3"))]);
    ok(&["attack", "--method", "cp40", "--in", s(&test), "--out", s(&work.join("cp40"))]);
    ok(&[
        "attack", "--method", "ad1", "--in", s(&test), "--classifier", s(&clf_ckpt), "--out", s(&work.join("ad1")),
    ]);
    ok(&["attack", "--method", "siamte", "--in", s(&test), "--ckpt", s(&eraser), "--out", s(&work.join("siamte"))]);
    let tclf = work.join("trace_clf");
    ok(&[
        "train-classifier", "--config", s(&cfg), "--data", s(corpus), "--trace-eraser", s(&eraser), "--out", s(&tclf),
    ]);
    let fps = work.join("fps");
    ok(&["fingerprint", "--data", s(&splits.join("train.json")), "--out", s(&fps)]);
    let niqe = work.join("niqe.model");
    ok(&["fit-niqe", "--images", s(pristine), "--patch", "8", "--out", s(&niqe)]);
    let common = |method: &str, processed: Option<&Path>, out: &Path| {
        let mut args = vec![
            "evaluate".to_string(),
            "--method".into(),
            method.into(),
            "--original".into(),
            s(&test).into(),
            "--classifier".into(),
            s(&clf_ckpt).into(),
            "--fingerprints".into(),
            s(&fps).into(),
            "--niqe-model".into(),
            s(&niqe).into(),
            "--patch".into(),
            "16".into(),
            "--repeats".into(),
            "2".into(),
            "--restarts".into(),
            "2".into(),
            "--out".into(),
            s(out).into(),
        ];
        if let Some(p) = processed {
            args.extend(["--processed".into(), s(p).into()]);
        }
        if method == "siamte" {
            args.extend([
                "--eraser".into(),
                s(&eraser).into(),
                "--trace-classifier".into(),
                s(&tclf.join("classifier.ckpt")).into(),
            ]);
        }
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&refs);
    };
    let reports = work.join("reports");
    common("ori", None, &reports.join("ori.json"));
    common("mf3", Some(&work.join("mf3")), &reports.join("mf3.json"));
    common("siamte", Some(&work.join("erased")), &reports.join("siamte.csv"));
    let first = fs::read_dir(corpus.join("cam_a")).unwrap().next().unwrap().unwrap().path();
    ok(&["visualize", "--image", s(&first), "--ckpt", s(&eraser), "--out", s(&work.join("viz"))]);
    ok(&[
        "report",
        "--in",
        s(&reports.join("ori.json")),
        s(&reports.join("mf3.csv")),
        s(&reports.join("siamte.csv")),
        "--out",
        s(&work.join("table.csv")),
    ]);
}
