//! Black-box tests of the `iopvae` binary: exit codes, artifacts, and the
//! full train -> eval -> export-latents flow on the synthetic dataset.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_iopvae")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn iopvae")
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    let out = dir.join("runs");
    std::fs::write(
        &path,
        format!(
            "dataset = \"onehot\"\nout_dir = \"{}\"\nhidden_dim = 16\nmax_epochs = 3\n\
             warmup_epochs = 2\nj2 = 2\nseed = 7\n{extra}",
            out.display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn train_eval_export_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "prior = \"implicit\"\n");
    let cfg = cfg.to_str().unwrap();

    let out = run(&["train", "--config", cfg]);
    assert_eq!(out.status.code(), Some(0), "train failed: {out:?}");
    let stem = dir.path().join("runs/onehot-implicit-seed7");
    let ckpt = format!("{}.ckpt", stem.display());
    assert!(Path::new(&ckpt).is_file());
    assert!(Path::new(&format!("{}-log.csv", stem.display())).is_file());
    assert!(Path::new(&format!("{}-manifest.json", stem.display())).is_file());

    let report = dir.path().join("report.json");
    let out = run(&[
        "eval",
        "--config",
        cfg,
        "--checkpoint",
        &ckpt,
        "--is-samples",
        "5",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "eval failed: {out:?}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["prior"], "implicit");
    assert!(json["elbo"].as_f64().unwrap().is_finite());
    assert!(json["is_log_likelihood"].as_f64().unwrap().is_finite());

    let latents = dir.path().join("latents.csv");
    let out = run(&[
        "export-latents",
        "--config",
        cfg,
        "--checkpoint",
        &ckpt,
        "--out",
        latents.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "export-latents failed: {out:?}");
    let csv = std::fs::read_to_string(&latents).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("z0,z1,label"));
    assert_eq!(lines.count(), 1000); // onehot test split size
}

#[test]
fn multi_seed_train_and_aggregate_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "prior = \"standard\"\n");
    let cfg = cfg.to_str().unwrap();

    let out = run(&["train", "--config", cfg, "--seed-list", "1,2"]);
    assert_eq!(out.status.code(), Some(0), "multi-seed train failed: {out:?}");
    let ckpts: Vec<String> = [1, 2]
        .iter()
        .map(|s| format!("{}/runs/onehot-standard-seed{s}.ckpt", dir.path().display()))
        .collect();
    for c in &ckpts {
        assert!(Path::new(c).is_file());
    }

    let report = dir.path().join("summary.json");
    let out = run(&[
        "eval",
        "--config",
        cfg,
        "--checkpoint",
        &ckpts[0],
        "--checkpoint",
        &ckpts[1],
        "--is-samples",
        "2",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "aggregate eval failed: {out:?}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["n_runs"], 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains('\u{b1}'), "expected mean \u{b1} std line, got: {stderr}");
}

#[test]
fn check_data_ok_on_synthetic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = run(&["check-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("ok"), "stdout: {stdout}");
}

#[test]
fn usage_errors_exit_2() {
    // Unknown subcommand (clap usage error).
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));

    // Missing config file.
    let out = run(&["train", "--config", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");

    // Invalid prior name in the config.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "prior = \"bogus\"\n");
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");

    // Unknown field in the config.
    let dir2 = tempfile::tempdir().unwrap();
    let cfg2 = write_config(dir2.path(), "no_such_field = 1\n");
    let out = run(&["train", "--config", cfg2.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn missing_mnist_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty-data-root");
    std::fs::create_dir(&empty).unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        format!(
            "dataset = \"mnist\"\ndata_root = \"{}\"\nout_dir = \"{}\"\nmax_epochs = 1\n",
            empty.display(),
            dir.path().join("runs").display()
        ),
    )
    .unwrap();
    let out = run(&["train", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing dataset file"), "stderr: {stderr}");
}

#[test]
fn eval_without_checkpoints_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = run(&["eval", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}
