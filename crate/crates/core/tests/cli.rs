use std::fs;
use std::path::Path;

use acr::cli;
use acr::data::cache::read_split;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("acr").chain(args.iter().copied());
    let code = cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write_config(dir: &Path) -> String {
    let cfg = r#"{
        "stream": {"type": "image", "tasks": 2, "classes_per_task": 2, "samples_per_class": 15, "side": 8},
        "epochs": 2,
        "confidence_epochs": 1,
        "buffer_size": 20,
        "batch_size": 8,
        "hidden": [16],
        "embed_dim": 8,
        "seeds": [0, 1],
        "corruptions": [{"kind": "pixelate", "severity": 3}]
    }"#;
    let path = dir.join("cfg.json");
    fs::write(&path, cfg).unwrap();
    path.display().to_string()
}

#[test]
fn missing_config_names_the_path() {
    let (code, _, err) = run(&["run", "/nonexistent/cfg.json"]);
    assert_ne!(code, 0);
    assert!(err.contains("/nonexistent/cfg.json"), "{err}");
}

#[test]
fn unknown_input_prints_usage() {
    let (code, _, err) = run(&["frobnicate"]);
    assert_ne!(code, 0);
    assert!(err.contains("Usage"), "{err}");
    let (code, _, err) = run(&["report", "x", "--bogus"]);
    assert_ne!(code, 0);
    assert!(err.contains("Usage"), "{err}");
    let (code, _, _) = run(&[]);
    assert_ne!(code, 0);
}

#[test]
fn gradcheck_passes() {
    let (code, out, _) = run(&["gradcheck"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("max relative error") && out.contains("pass"), "{out}");
}

#[test]
fn run_with_overrides_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let (code, out, err) = run(&[
        "run",
        &cfg,
        "--seed",
        "3",
        "--policy",
        "acr",
        "--out",
        out_dir.to_str().unwrap(),
        "--set",
        "learning_rate=0.1",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("challenging,3,"), "{out}");
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let written: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(written["learning_rate"], 0.1);
    assert!(out_dir.join("seed_3/alpha_ood_pixelate_3.csv").exists());

    let (code, out, err) = run(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("| out | challenging | 1 |"), "{out}");
}

#[test]
fn bad_override_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let (code, _, err) = run(&["run", &cfg, "--set", "confidence_epochs=9"]);
    assert_ne!(code, 0);
    assert!(err.contains("confidence_epochs"), "{err}");
    let (code, _, _) = run(&["run", &cfg, "--policy", "greedy"]);
    assert_ne!(code, 0);
}

#[test]
fn sweep_runs_each_value_for_each_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("sweep");
    let (code, out, err) = run(&[
        "sweep",
        "--param",
        "confidence_epochs",
        "--values",
        "1..2",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
        "--set",
        "corruptions=[]",
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 2, "{out}");
    let sweep = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    // header + 2 values × 2 seeds
    assert_eq!(sweep.lines().count(), 5);
    assert!(out_dir.join("confidence_epochs_2/summary.csv").exists());
}

#[test]
fn corrupt_materializes_test_sets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("ood");
    let (code, out, err) = run(&["corrupt", &cfg, "gaussian-noise:5", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 2);
    let (kind, task, samples) = read_split(&out_dir.join("task1_gaussian-noise_5.bin")).unwrap();
    assert_eq!(kind.input_dim(), 64);
    assert_eq!(task, 1);
    assert_eq!(samples.len(), 2 * 3);
    let (code, _, _) = run(&["corrupt", &cfg, "gaussian-noise:9"]);
    assert_ne!(code, 0);
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = acr::harness::RunConfig::load(&path).unwrap();
        cfg.validate().unwrap();
        n += 1;
    }
    assert!(n >= 2);
    let default = acr::harness::RunConfig::load(&dir.join("default.json")).unwrap();
    assert_eq!(default, acr::harness::RunConfig::default());
}
