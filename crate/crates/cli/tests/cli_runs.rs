use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spinboson_cli::Manifest;

fn spinboson(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinboson"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("SPINBOSON_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = spinboson(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SMALL: &str = r#"{
  "grid": {"epsilon_values": [0.0, 1.0], "lambda_values": [0.1, 0.5], "omega_c_values": [1.0, 5.0], "beta_values": [0.5, 1.0]},
  "hierarchy": {"depth": 2, "n_matsubara": 1, "refine": false},
  "dataset": {"n_holdout": 4, "krr_train_samples": 300, "nn_train_samples": 64, "nn_validation_samples": 32},
  "training": {"epochs": 2, "batch_size": 16},
  "models": [
    {"id": "krr-g", "kernel": {"family": "gaussian", "sigma": 2.0}, "lambda_reg": 1e-8},
    {"id": "krr-l", "kernel": {"family": "linear"}, "lambda_reg": 1e-6}
  ]
}"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("cfg.json");
    fs::write(&p, text).unwrap();
    p
}

fn files_under(root: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap();
                out.insert(rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/"));
            }
        }
    }
    out
}

fn csv_rows(p: &Path) -> usize {
    fs::read_to_string(p).unwrap().lines().count() - 1
}

fn small_run(root: &Path, name: &str) -> PathBuf {
    let cfg = write_config(root, SMALL);
    let run = root.join(name);
    let (c, r) = (cfg.to_str().unwrap(), run.to_str().unwrap());
    ok(&["generate", "--config", c, "--out", r]);
    ok(&["slice", "--in", r, "--window", "41"]);
    ok(&["train", "--in", r, "--model", "krr-g"]);
    ok(&["train", "--in", r, "--model", "krr-l"]);
    ok(&["train", "--in", r, "--model", "ffnn"]);
    run
}

#[test]
fn small_pipeline_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let run = small_run(tmp.path(), "a");
    let r = run.to_str().unwrap();

    assert_eq!(csv_rows(&run.join("trajectories/index.csv")), 12);
    assert_eq!(csv_rows(&run.join("holdout/index.csv")), 4);
    assert_eq!(csv_rows(&run.join("data/train.csv")), 12 * 160);
    assert_eq!(csv_rows(&run.join("data/subtrain.csv")), 1536);
    assert_eq!(csv_rows(&run.join("data/validation.csv")), 384);

    let holdout = run.join("holdout");
    ok(&["benchmark", "--in", r, "--models", "krr-g,krr-l", "--holdout", holdout.to_str().unwrap()]);
    let report = fs::read_to_string(run.join("benchmark/report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 3, "{report}");
    assert!(lines[0].starts_with("model,parameters,mae_symmetric,mae_asymmetric"));
    let models: BTreeSet<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(models, BTreeSet::from(["krr-g", "krr-l"]));

    let out = ok(&["report", "--in", r]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("| model | parameters |"));
    ok(&["forecast", "--in", r, "--model", "ffnn"]);

    let manifest = Manifest::load_or_default(&run).unwrap();
    let listed: BTreeSet<String> = manifest.artifacts.iter().cloned().collect();
    let mut on_disk = files_under(&run);
    on_disk.remove("manifest.json");
    assert_eq!(listed, on_disk);
    for key in ["generate", "slice", "train:krr-g", "train:ffnn", "benchmark", "report", "forecast:ffnn"] {
        assert!(manifest.stages.contains_key(key), "missing stage {key}");
    }
    assert_eq!(manifest.config_hash.len(), 64);
}

#[test]
fn repeated_runs_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = small_run(tmp.path(), "a");
    let b = small_run(tmp.path(), "b");
    for f in [
        "trajectories/index.csv",
        "data/train.csv",
        "data/subtrain.csv",
        "data/validation.csv",
        "data/splits.json",
        "models/krr-g.krr",
        "models/krr-l.krr",
        "models/ffnn.net",
        "models/ffnn_history.csv",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("r");
    let r = run.to_str().unwrap();

    let out = spinboson(&["benchmark", "--out", r, "--models", "krr-g"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let bad = write_config(tmp.path(), r#"{"dataset": {"subtrain_fraction": 2.0}}"#);
    let out = spinboson(&["generate", "--config", bad.to_str().unwrap(), "--out", r]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset.subtrain_fraction"));

    let out = spinboson(&["train", "--out", r, "--model", "krr-q"]);
    assert_eq!(out.status.code(), Some(1));

    let out = spinboson(&["generate", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(1));

    let stuck = write_config(
        tmp.path(),
        r#"{"grid": {"epsilon_values": [0.0], "lambda_values": [1.0], "omega_c_values": [1.0], "beta_values": [1.0]},
            "hierarchy": {"depth": 1, "n_matsubara": 1, "max_depth": 2, "max_matsubara": 2, "tolerance": 1e-14},
            "dataset": {"n_holdout": 1}}"#,
    );
    let out = spinboson(&["generate", "--config", stuck.to_str().unwrap(), "--out", r]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("grid point 0") && err.contains("not converged"), "{err}");
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_spinboson"))
        .args(["generate", "--config", cfg.to_str().unwrap()])
        .env("RUST_LOG", "warn")
        .env("SPINBOSON_OUT", tmp.path().join("root"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("root/default/trajectories/index.csv").exists());
    assert!(tmp.path().join("root/default/manifest.json").exists());
}

/// 1000 grid points with a minimal hierarchy: only the counts matter here.
#[test]
fn full_grid_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"hierarchy": {"depth": 1, "n_matsubara": 0, "refine": false}}"#);
    let run = tmp.path().join("full");
    let r = run.to_str().unwrap();
    ok(&["generate", "--grid", "full", "--config", cfg.to_str().unwrap(), "--out", r]);
    assert_eq!(csv_rows(&run.join("trajectories/index.csv")), 900);
    assert_eq!(csv_rows(&run.join("holdout/index.csv")), 100);
    ok(&["slice", "--in", r, "--window", "41"]);
    assert_eq!(csv_rows(&run.join("data/train.csv")), 144_000);
    assert_eq!(csv_rows(&run.join("data/subtrain.csv")), 115_200);
    assert_eq!(csv_rows(&run.join("data/validation.csv")), 28_800);

    let sym = tmp.path().join("sym");
    ok(&["generate", "--grid", "symmetric", "--config", cfg.to_str().unwrap(), "--out", sym.to_str().unwrap()]);
    let n = csv_rows(&sym.join("trajectories/index.csv")) + csv_rows(&sym.join("holdout/index.csv"));
    assert_eq!(n, 500);
}
