use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use amlstm::data;
use amlstm::model::FusionModel;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_amlstm"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn gen_data_is_deterministic_and_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen-data", "--seed", "7", "--classes", "4", "--out", s(&a)]);
    ok(&["gen-data", "--seed", "7", "--classes", "4", "--out", s(&b)]);
    assert_eq!(read(a.join("data.bin")), read(b.join("data.bin")));
    assert_eq!(read(a.join("data.manifest")), read(b.join("data.manifest")));

    let manifest = String::from_utf8(read(a.join("data.manifest"))).unwrap();
    let blob = read(a.join("data.bin"));
    assert!(manifest.contains("records=40\n"));
    assert!(manifest.contains(&format!("payload_bytes={}\n", blob.len())));
    let ds = data::load(&a.join("data")).unwrap();
    assert_eq!(ds.len(), 40);
    assert_eq!(ds.dims(), (8, 4));
    let config = String::from_utf8(read(a.join("run.config"))).unwrap();
    assert!(config.contains("seed=7\n") && config.contains("classes=4\n"));
}

#[test]
fn invalid_config_exits_1_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = run(&["gen-data", "--classes", "0", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");

    let o = run(&["gen-data", "--set", "colour=red", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small\nclasses=3\nsamples_per_class=4\nseed=5\n").unwrap();
    let out = dir.path().join("g");
    ok(&["gen-data", "--config", s(&cfg), "--samples-per-class", "6", "--out", s(&out)]);
    let ds = data::load(&out.join("data")).unwrap();
    assert_eq!(ds.class_counts(), vec![6, 6, 6]);
    let dumped = String::from_utf8(read(out.join("run.config"))).unwrap();
    assert!(dumped.contains("seed=5\n") && dumped.contains("samples_per_class=6\n"));
}

#[test]
fn preprocess_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&["gen-data", "--out", s(&raw), "--d-audio", "5"]);
    let input = raw.join("data");
    let before = read(raw.join("data.bin"));

    let p1 = dir.path().join("p1");
    ok(&["preprocess", "--input", s(&input), "--out", s(&p1)]);
    let train = data::load(&p1.join("train")).unwrap();
    assert_eq!(train.dims().1, 4 * 5);
    let plain = train.len();

    let p2 = dir.path().join("p2");
    let p3 = dir.path().join("p3");
    ok(&["preprocess", "--input", s(&input), "--out", s(&p2), "--augment"]);
    ok(&["preprocess", "--input", s(&input), "--out", s(&p3), "--augment"]);
    assert_eq!(data::load(&p2.join("train")).unwrap().len(), 2 * plain);
    for f in ["train.bin", "train.manifest", "test.bin", "test.manifest"] {
        assert_eq!(read(p2.join(f)), read(p3.join(f)), "{f}");
    }
    assert_eq!(read(raw.join("data.bin")), before, "input must not change");

    let o = run(&["preprocess", "--input", s(&dir.path().join("missing")), "--out", s(&p3)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.manifest"));
}

fn prepared(dir: &Path, extra: &[&str]) -> PathBuf {
    let raw = dir.join("raw");
    let mut args = vec!["gen-data", "--out", s(&raw)];
    args.extend_from_slice(extra);
    ok(&args);
    let prep = dir.join("prep");
    ok(&["preprocess", "--input", s(&raw.join("data")), "--out", s(&prep)]);
    prep
}

#[test]
fn tiny_training_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let prep = prepared(dir.path(), &["--classes", "2", "--samples-per-class", "10"]);
    let run_dir = dir.path().join("run");
    ok(&[
        "train", "--data", s(&prep.join("train")), "--out", s(&run_dir), "--epochs-max", "30", "--patience", "30",
        "--hidden", "8", "--fused", "8", "--mlp-hidden", "8,8",
    ]);
    for f in ["model.ckpt", "metrics.csv", "summary.json", "train.log", "run.config"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let csv = String::from_utf8(read(run_dir.join("metrics.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 31);
    assert!(csv.starts_with(amlstm::train::METRICS_HEADER));
    // Interrupted-run safety: the checkpoint is complete and no temp file remains.
    FusionModel::load(&run_dir.join("model.ckpt")).unwrap();
    assert!(!run_dir.join("model.ckpt.tmp").exists());
}

#[test]
fn zero_aux_weights_leave_aux_losses_visible() {
    let dir = tempfile::tempdir().unwrap();
    let prep = prepared(dir.path(), &["--classes", "2", "--samples-per-class", "10"]);
    let run_dir = dir.path().join("run");
    ok(&[
        "train", "--data", s(&prep.join("train")), "--out", s(&run_dir), "--epochs-max", "5", "--patience", "5",
        "--alpha", "0", "--beta", "0", "--hidden", "8", "--fused", "8", "--mlp-hidden", "8,8",
    ]);
    let summary: serde_json::Value = serde_json::from_slice(&read(run_dir.join("summary.json"))).unwrap();
    let m = &summary["summary"]["final_metrics"];
    let (total, main) = (m["total"].as_f64().unwrap(), m["main"].as_f64().unwrap());
    assert!(m["aux_v"].as_f64().unwrap() > 0.0 && m["aux_a"].as_f64().unwrap() > 0.0);
    assert!((total - main).abs() < 1e-12);
    assert_eq!(summary["alpha"].as_f64(), Some(0.0));
}

#[test]
fn eval_modes_and_overfit_training_set() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&["gen-data", "--out", s(&raw)]);
    let prep = dir.path().join("prep");
    ok(&["preprocess", "--input", s(&raw.join("data")), "--out", s(&prep), "--train-fraction", "1.0"]);
    let run_dir = dir.path().join("run");
    ok(&[
        "train", "--data", s(&prep.join("train")), "--out", s(&run_dir), "--val-fraction", "0", "--patience", "300",
        "--target-train-accuracy", "1.0",
    ]);
    let ckpt = run_dir.join("model.ckpt");
    let text = ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&prep.join("train")), "--out", s(&dir.path().join("ev"))]);
    assert!(text.contains("mode: audio-visual"));
    assert!(text.contains("accuracy: 1.000000"), "{text}");
    let report: serde_json::Value = serde_json::from_slice(&read(dir.path().join("ev/eval.json"))).unwrap();
    assert_eq!(report["accuracy"].as_f64(), Some(1.0));

    let text = ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&prep.join("train")), "--mode", "video-only"]);
    assert!(text.contains("video-only (audio stream replaced by all-zero frames)"));

    let missing = dir.path().join("absent.ckpt");
    let o = run(&["eval", "--checkpoint", s(&missing), "--data", s(&prep.join("train"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.ckpt"));
}

#[test]
fn gradcheck_command() {
    let a = ok(&["gradcheck", "--seed", "3", "--gradcheck-seeds", "2"]);
    let b = ok(&["gradcheck", "--seed", "3", "--gradcheck-seeds", "2"]);
    assert_eq!(a, b);
    assert!(a.contains("full-model/standard/seed4"));

    let o = run(&["gradcheck", "--gradcheck-seeds", "1", "--corrupt", "lstm-step/standard"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("lstm-step/standard"), "{err}");
    assert!(!err.contains("paper-literal"), "{err}");
}
