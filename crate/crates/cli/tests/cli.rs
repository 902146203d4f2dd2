use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn scratch() -> TempDir {
    TempDir::new_in(env!("CARGO_TARGET_TMPDIR")).unwrap()
}

fn vqa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vqa"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn bad_config_exits_with_2() {
    let dir = scratch();
    std::fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    let out = vqa(dir.path(), &["train", "--config", "bad.json", "--data", "nowhere"]);
    assert_eq!(out.status.code(), Some(2));

    let missing = vqa(dir.path(), &["train", "--config", "absent.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn tiny_batch_is_a_contract_error() {
    let dir = scratch();
    let mut cfg = vqa_core::harness::RunConfig::toy(0);
    cfg.optim.batch_size = 1;
    let json = serde_json::to_string(&cfg).unwrap();
    std::fs::write(dir.path().join("cfg.json"), json).unwrap();
    let out = vqa(dir.path(), &["train", "--config", "cfg.json", "--data", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_values_exit_with_2() {
    let dir = scratch();
    assert_eq!(vqa(dir.path(), &["train", "--fusion", "sum"]).status.code(), Some(2));
    assert_eq!(vqa(dir.path(), &["train", "--shared", "maybe"]).status.code(), Some(2));
    assert_eq!(vqa(dir.path(), &["gen-data", "--split", "nope"]).status.code(), Some(2));
}

#[test]
fn missing_training_data_exits_with_2() {
    let dir = scratch();
    assert_eq!(vqa(dir.path(), &["train"]).status.code(), Some(2));
}

#[test]
fn end_to_end_pipeline() {
    let dir = scratch();
    let d = dir.path();
    ok(&vqa(d, &["gen-data", "--count", "6", "--seed", "3", "--out", "data"]));
    assert!(d.join("data/manifest.csv").exists());

    ok(&vqa(d, &["sample-fragments", "--input", "data/train_0000.rgb8", "--out", "frag"]));
    assert!(d.join("frag/fragment.json").exists());
    assert!(d.join("frag/fragment_0000.ppm").exists());

    let mut cfg = vqa_core::harness::RunConfig::toy(0);
    cfg.optim.batch_size = 3;
    std::fs::write(d.join("cfg.json"), cfg.to_json()).unwrap();
    ok(&vqa(
        d,
        &["train", "--config", "cfg.json", "--data", "data", "--epochs", "1", "--fusion", "score", "--shared", "false", "--out", "run"],
    ));
    assert!(d.join("run/checkpoint.json").exists());
    let log = std::fs::read_to_string(d.join("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let manifest = std::fs::read_to_string(d.join("run/checkpoint.json")).unwrap();
    assert!(manifest.contains("\"shared\": false"));

    ok(&vqa(d, &["eval", "--checkpoint", "run", "--data", "data", "--mode", "technical", "--out", "eval"]));
    let preds = std::fs::read_to_string(d.join("eval/predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 7);
    assert!(preds.starts_with("video_id,pred,gt"));

    ok(&vqa(d, &["quality-map", "--checkpoint", "run", "--input", "data/train_0001.rgb8", "--out", "maps"]));
    assert!(d.join("maps/quality_maps.json").exists());

    let eval_bad = vqa(d, &["eval", "--checkpoint", "run", "--data", "data", "--mode", "sideways"]);
    assert_eq!(eval_bad.status.code(), Some(2));
}
