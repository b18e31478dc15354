//! Drives the `lgtm` binary through a full toy run.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lgtm(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_lgtm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("LGTM_LLM_URL")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "lgtm {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: [&str; 22] = [
    "--set", "text_encoder=stub",
    "--set", "model.text_dim=16",
    "--set", "model.num_steps=100",
    "--set", "model.part.latent_dim=8",
    "--set", "model.part.ff_dim=16",
    "--set", "model.optimizer.ff_dim=32",
    "--set", "model.optimizer.smooth_hidden=8",
    "--set", "max_steps=5",
    "--set", "batch_size=4",
    "--set", "crop_frames=24",
    "--set", "max_clips=4",
];

#[test]
fn toy_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    lgtm(&["toycorpus", path(&data)]);
    assert_eq!(fs::read_dir(data.join("motions")).unwrap().count(), 32);

    lgtm(&["ingest", path(&data)]);
    let out = lgtm(&["decompose", path(&data), "--offline"]);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["fallback"], 32);

    let run = dir.path().join("run");
    let mut args = vec!["train", path(&data), "--out", path(&run)];
    args.extend(TINY);
    lgtm(&args);
    assert!(run.join("final.ckpt").exists());
    assert_eq!(fs::read_to_string(run.join("loss.jsonl")).unwrap().lines().count(), 5);

    let eval_cfg = dir.path().join("eval.json");
    fs::write(&eval_cfg, r#"{"embed_dim": 8, "hidden": 16, "buckets": 64, "steps": 5, "batch_size": 8, "crop_frames": 16}"#).unwrap();
    let evaluator = dir.path().join("evaluator.ckpt");
    lgtm(&["train-eval", path(&data), "--out", path(&evaluator), "--config", path(&eval_cfg)]);

    let ckpt = run.join("final.ckpt");
    let single = dir.path().join("single");
    lgtm(&[
        "sample", "--checkpoint", path(&ckpt), "--caption", "a person walks forward",
        "--frames", "30", "--steps", "4", "--seed", "2", "--out", path(&single), "--offline", "--plot",
    ]);
    let sidecar: Value =
        serde_json::from_str(&fs::read_to_string(single.join("a_person_walks_forward_s2.json")).unwrap()).unwrap();
    assert_eq!(sidecar["frames"], 30);
    assert!(single.join("a_person_walks_forward_s2.svg").exists());

    let generated = dir.path().join("generated");
    lgtm(&[
        "sample", "--checkpoint", path(&ckpt), "--from-data", path(&data), "--split", "train",
        "--steps", "2", "--out", path(&generated),
    ]);
    let report_path = dir.path().join("report.json");
    let out = lgtm(&[
        "eval", "--evaluator", path(&evaluator), "--generated", path(&generated),
        "--reference", path(&data), "--split", "train", "--pool-size", "8", "--out", path(&report_path),
    ]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["schema_version"], "lgtm-metrics-v1");
    assert_eq!(report, serde_json::from_str::<Value>(&fs::read_to_string(report_path).unwrap()).unwrap());
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_lgtm"))
        .args(["ingest", path(&dir.path().join("missing"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    lgtm(&["toycorpus", path(&data)]);
    lgtm(&["ingest", path(&data)]);
    let out = Command::new(env!("CARGO_BIN_EXE_lgtm"))
        .args(["train", path(&data), "--out", path(&dir.path().join("run")), "--set", "model.layerz=3"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("layerz"));
}
