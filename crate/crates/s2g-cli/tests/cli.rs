//! End-to-end tests of the `s2g` binary: exit codes, artifacts, caching,
//! and determinism of emitted files.

use std::path::Path;
use std::process::{Command, Output};

fn s2g(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s2g"))
        .args(args)
        .output()
        .expect("spawn s2g")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const TINY_DELAUNAY: &str = r#"{
  "task": "delaunay",
  "seed": 11,
  "dataset": {"train": 12, "val": 6, "test": 6, "n_min": 8, "n_max": 10},
  "model": {"phi_widths": [8, 8], "d1": 4, "psi_widths": [8, 1]},
  "train": {"batch_size": 4, "max_epochs": 2, "patience": 20}
}"#;

#[test]
fn dry_run_validates_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY_DELAUNAY);
    let out_dir = dir.path().join("out");
    let out = s2g(&[
        "all",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
        "--dry-run",
    ]);
    assert!(out.status.success(), "{out:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("task: delaunay"));
    assert!(stdout.contains("parameters"));
    assert!(!out_dir.exists(), "dry run must not write anything");
}

#[test]
fn unknown_config_key_exits_1_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"task":"delaunay","seed":1,"train":{"learning_rat":0.1}}"#,
    );
    let out = s2g(&["train", "--config", &config]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("learning_rat"), "{stderr}");
}

#[test]
fn negative_learning_rate_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"task":"delaunay","seed":1,"train":{"learning_rate":-1.0}}"#,
    );
    let out = s2g(&["train", "--config", &config]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_usage_exits_1_and_missing_checkpoint_exits_2() {
    let out = s2g(&["train"]);
    assert_eq!(out.status.code(), Some(1), "missing --config is a usage error");

    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY_DELAUNAY);
    let out_dir = dir.path().join("out");
    let out = s2g(&[
        "evaluate",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "no checkpoint yet: {out:?}");
}

#[test]
fn full_pipeline_produces_artifacts_and_reuses_cache() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY_DELAUNAY);
    let out_dir = dir.path().join("out");
    let out_str = out_dir.display().to_string();

    let first = s2g(&["all", "--config", &config, "--out", &out_str]);
    assert!(first.status.success(), "{first:?}");
    assert!(out_dir.join("checkpoint.bin").exists());
    assert!(out_dir.join("metrics.csv").exists());
    assert!(out_dir.join("summary.json").exists());
    let renders: Vec<_> = std::fs::read_dir(out_dir.join("renders"))
        .unwrap()
        .collect();
    assert!(!renders.is_empty() && renders.len() <= 8);
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert!(stdout.contains("generated"), "first run generates data");

    let metrics_first = std::fs::read(out_dir.join("metrics.csv")).unwrap();
    let summary_first: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();

    // second run: datasets come from the cache, metrics identical
    let second = s2g(&["all", "--config", &config, "--out", &out_str]);
    assert!(second.status.success(), "{second:?}");
    let stdout = String::from_utf8_lossy(&second.stdout);
    assert!(!stdout.contains("generated"), "second run reuses the cache");
    let metrics_second = std::fs::read(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics_first, metrics_second, "byte-identical metrics");
    let summary_second: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(
        summary_first.get("test"),
        summary_second.get("test"),
        "identical test metrics"
    );

    // evaluate against the stored checkpoint works now
    let eval = s2g(&["evaluate", "--config", &config, "--out", &out_str]);
    assert!(eval.status.success(), "{eval:?}");
    assert!(out_dir.join("evaluation.json").exists());
}

#[test]
fn generate_is_deterministic_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY_DELAUNAY);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let st = s2g(&["generate", "--config", &config, "--out", out.to_str().unwrap()]);
        assert!(st.status.success());
    }
    let list = |p: &Path| {
        let mut files: Vec<_> = std::fs::read_dir(p.join("data"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        files
    };
    let (fa, fb) = (list(&out_a), list(&out_b));
    assert_eq!(fa.len(), 3);
    for (a, b) in fa.iter().zip(&fb) {
        assert_eq!(a.file_name(), b.file_name(), "same cache keys");
        assert_eq!(
            std::fs::read(a).unwrap(),
            std::fs::read(b).unwrap(),
            "byte-identical datasets"
        );
    }
}

#[test]
fn seed_override_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY_DELAUNAY);
    let out_dir = dir.path().join("out");
    let out_str = out_dir.display().to_string();
    let a = s2g(&["generate", "--config", &config, "--out", &out_str]);
    assert!(a.status.success());
    let b = s2g(&["generate", "--config", &config, "--out", &out_str, "--seed", "99"]);
    assert!(b.status.success());
    let files: Vec<_> = std::fs::read_dir(out_dir.join("data")).unwrap().collect();
    assert_eq!(files.len(), 6, "override produces distinct cache keys");
}
