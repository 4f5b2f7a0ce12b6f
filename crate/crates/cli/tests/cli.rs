use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mappable(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mappable"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).expect("error line is JSON")
}

fn run_pipeline(dir: &Path, seed: &str) {
    for cmd in ["gen-scene", "train", "embed", "landmarks", "evaluate"] {
        let out = mappable(&[cmd, "--seed", seed], dir);
        assert!(
            out.status.success(),
            "{cmd} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn pipeline_is_reproducible_and_writes_manifests() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(a.path(), "11");
    run_pipeline(b.path(), "11");
    let curve_a = std::fs::read(a.path().join("accuracy_curve.csv")).unwrap();
    let curve_b = std::fs::read(b.path().join("accuracy_curve.csv")).unwrap();
    assert_eq!(curve_a, curve_b);
    assert!(String::from_utf8(curve_a).unwrap().lines().count() > 2);

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("manifest-evaluate.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "evaluate");
    assert_eq!(manifest["seed_override"], 11);
    assert!(manifest["inputs"].get("landmarks.csv").is_some());
    let recorded = manifest["outputs"]["accuracy_curve.csv"].as_str().unwrap();
    assert_eq!(recorded.len(), 64);
}

#[test]
fn different_seeds_give_different_scenes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(mappable(&["gen-scene", "--seed", "1"], a.path())
        .status
        .success());
    assert!(mappable(&["gen-scene", "--seed", "2"], b.path())
        .status
        .success());
    assert_ne!(
        std::fs::read(a.path().join("scene.txt")).unwrap(),
        std::fs::read(b.path().join("scene.txt")).unwrap()
    );
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mappable(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "usage");
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mappable(&["train"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["exit_code"], 3);
    assert!(err["message"].as_str().unwrap().contains("scene.txt"));
}

#[test]
fn empty_landmark_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path(), "5");
    std::fs::write(dir.path().join("landmarks.csv"), "index,x,y\n").unwrap();
    let out = mappable(&["evaluate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "config");
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[scene]\nseed = 1\nnot_a_key = 3\n").unwrap();
    let out = mappable(
        &["gen-scene", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["message"]
        .as_str()
        .unwrap()
        .contains(":3"));
}

#[test]
fn compare_needs_two_configs() {
    let dir = tempfile::tempdir().unwrap();
    let one = configs_dir().join("combined.toml");
    let out = mappable(&["compare", "--config", one.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn compare_ranks_combined_loss_above_nv_only() {
    let dir = tempfile::tempdir().unwrap();
    let combined = configs_dir().join("combined.toml");
    let nv_only = configs_dir().join("nv_only.toml");
    let out = mappable(
        &[
            "compare",
            "--config",
            combined.to_str().unwrap(),
            "--config",
            nv_only.to_str().unwrap(),
            "--seed",
            "0",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let text = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    let mut lines = text.lines();
    let headers: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    let value = |row: &[&str], name: &str| {
        let col = headers.iter().position(|h| *h == name).unwrap();
        row[col].parse::<f64>().unwrap()
    };
    assert!(value(&rows[0], "pearson_local") > value(&rows[1], "pearson_local"));
    assert!(value(&rows[0], "accuracy_r1") > value(&rows[1], "accuracy_r1"));
    assert!(dir.path().join("manifest-compare.json").exists());
}
