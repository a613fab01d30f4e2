mod common;

use std::process::Command;

use ptd::dataio::{load_bundle, save_bundle, BundleMeta};

fn ptd(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ptd")).args(args).output().unwrap()
}

#[test]
fn ttest_prints_the_p_value() {
    let out = ptd(&["ttest", "--a", "1,2,3,4,5", "--b", "2,3,4,5,6"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let p = v["p_value"].as_f64().unwrap();
    assert!((p - 0.3466).abs() < 1e-4, "p = {p}");
}

#[test]
fn corrupt_then_factorize() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::mixture(90, 3.0, 1.0, 4.0, 1);
    let clean = dir.path().join("clean");
    save_bundle(&data, &BundleMeta::for_dataset(&data), &clean).unwrap();
    let noisy = dir.path().join("noisy");
    let out = ptd(&[
        "corrupt",
        "--input",
        clean.to_str().unwrap(),
        "--tau",
        "0.2",
        "--output",
        noisy.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (loaded, _) = load_bundle(&noisy).unwrap();
    assert_eq!(loaded.noisy_labels().unwrap().len(), 90);

    let parts = dir.path().join("parts");
    let out = ptd(&[
        "factorize",
        "--input",
        noisy.to_str().unwrap(),
        "--r",
        "2",
        "--output",
        parts.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "dataset = \"data\"\nr = 0\n").unwrap();
    let out = ptd(&["pipeline", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(&cfg, "dataset = [").unwrap();
    assert_eq!(
        ptd(&["pipeline", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn missing_data_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = ptd(&[
        "corrupt",
        "--input",
        dir.path().join("absent").to_str().unwrap(),
        "--tau",
        "0.2",
        "--output",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn readme_config_parses() {
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap();
    let block = readme.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
    let cfg = ptd::harness::ExperimentConfig::from_toml_str(block).unwrap();
    assert_eq!(cfg.r, 3);
    assert_eq!(cfg.k, Some(50));
}
