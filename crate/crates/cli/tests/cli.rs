use std::path::Path;
use std::process::{Command, Output};

fn dummynet(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dummynet"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env_remove("DUMMYNET_DATA_DIR")
        .output()
        .expect("binary runs")
}

const SMALL: &str = r#"
seed = 3
data_dir = "data"
output_dir = "run"

[toy]
keypoint_records = 600
source_persons = 4
train_pos = 2
train_neg = 2
test_pos = 2
test_neg = 2
scenes = 1
"#;

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 1\nlearning_rate = 3\n").unwrap();
    let out = dummynet(&cfg, &["fit-poses"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dummynet(&dir.path().join("absent.toml"), &["fit-poses"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stages_report_missing_prerequisites() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    // No dataset yet.
    assert_eq!(dummynet(&cfg, &["fit-poses"]).status.code(), Some(3));
    assert_eq!(dummynet(&cfg, &["make-toy-data"]).status.code(), Some(0));
    // The generator needs the appearance encoder and mask estimator.
    let out = dummynet(&cfg, &["train-gan"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-mask"));
    assert_eq!(dummynet(&cfg, &["eval", "--samples", "hull-mask"]).status.code(), Some(3));
}

#[test]
fn completed_stage_is_not_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    assert_eq!(dummynet(&cfg, &["make-toy-data"]).status.code(), Some(0));
    let first = dummynet(&cfg, &["fit-poses"]);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(String::from_utf8_lossy(&first.stdout).contains("done"));
    let model = std::fs::read(dir.path().join("run/pose_model.json")).unwrap();
    let second = dummynet(&cfg, &["fit-poses"]);
    assert!(String::from_utf8_lossy(&second.stdout).contains("up to date"));
    assert_eq!(std::fs::read(dir.path().join("run/pose_model.json")).unwrap(), model);
    // A different seed changes the stage's identity.
    let third = dummynet(&cfg, &["--seed", "4", "fit-poses"]);
    assert!(String::from_utf8_lossy(&third.stdout).contains("done"));
}

#[test]
fn data_dir_can_be_overridden_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let elsewhere = dir.path().join("elsewhere");
    let out = Command::new(env!("CARGO_BIN_EXE_dummynet"))
        .arg("--config")
        .arg(&cfg)
        .arg("make-toy-data")
        .env("DUMMYNET_DATA_DIR", &elsewhere)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(elsewhere.join("keypoints.jsonl").exists());
    assert!(!dir.path().join("data").exists());
}

#[test]
fn unknown_mode_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dummynet(&cfg, &["ablate", "--mode", "no-such-mode"]);
    assert_eq!(out.status.code(), Some(2));
}
