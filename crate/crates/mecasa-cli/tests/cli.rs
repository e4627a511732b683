//! End-to-end tests of the `mecasa` binary on a small synthetic dataset.

use std::path::Path;
use std::process::{Command, Output};

fn mecasa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mecasa"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("failed to launch mecasa")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = mecasa(dir, args);
    assert!(
        out.status.success(),
        "mecasa {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).expect("report missing")).expect("bad JSON")
}

#[test]
fn full_pipeline_on_small_synthetic_set() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--out", "ds", "--trials", "10", "--seed", "3", "--snr", "2.0"]);
    ok(dir, &["validate", "--data", "ds", "--out", "rep"]);

    ok(dir, &["preprocess", "--data", "ds", "--modality", "eeg", "--out", "prep", "--seed", "3"]);
    let rep = read_json(&dir.join("prep/preprocess_eeg.json"));
    assert_eq!(rep["epoch_shape"], serde_json::json!([1, 21, 128]));
    assert_eq!(rep["epoch_count"], 220);

    for (repr, shape) in [
        ("od128", serde_json::json!([1, 68, 128])),
        ("hbt", serde_json::json!([1, 34, 128])),
        ("od10", serde_json::json!([1, 68, 10])),
    ] {
        ok(
            dir,
            &["preprocess", "--data", "ds", "--modality", "fnirs", "--repr", repr,
              "--out", "prep", "--seed", "3"],
        );
        let rep = read_json(&dir.join(format!("prep/preprocess_{repr}.json")));
        assert_eq!(rep["epoch_shape"], shape, "repr {repr}");
    }

    ok(
        dir,
        &["train", "--data", "prep", "--modality", "eeg", "--dims", "16-32",
          "--seed", "3", "--out", "run", "--epochs", "1", "--folds", "0", "--lr", "0.001"],
    );
    let rep = read_json(&dir.join("run/train_eeg.json"));
    assert!(rep["metrics"]["mean_accuracy"].as_f64().unwrap() >= 0.0);
    assert!(rep["metrics"].get("runtime_secs").is_none());
    assert!(dir.join("run/model_eeg.ckpt").exists());

    ok(
        dir,
        &["fuse", "--data", "prep", "--modality", "fnirs", "--repr", "od10",
          "--dims", "16-32", "--seed", "3", "--out", "fuse_run",
          "--epochs", "1", "--lr", "0.001"],
    );
    let rep = read_json(&dir.join("fuse_run/fuse.json"));
    for key in ["eeg_test_accuracy", "fnirs_test_accuracy", "fused_test_accuracy"] {
        let v = rep[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    assert!(dir.join("fuse_run/features_eeg.feat").exists());
    assert!(dir.join("fuse_run/features_od10.feat").exists());
}

#[test]
fn ablate_repr_grid_has_three_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--out", "ds", "--trials", "10", "--seed", "5", "--snr", "2.0"]);
    for repr in ["od10", "hbt", "od128"] {
        ok(
            dir,
            &["preprocess", "--data", "ds", "--modality", "fnirs", "--repr", repr,
              "--out", "prep", "--seed", "5"],
        );
    }
    ok(
        dir,
        &["ablate", "--grid", "repr", "--data", "prep", "--modality", "fnirs",
          "--dims", "16-32", "--seed", "5", "--out", "ab",
          "--epochs", "1", "--folds", "0", "--lr", "0.001"],
    );
    let rep = read_json(&dir.join("ab/ablate.json"));
    let rows = rep["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let cells: Vec<&str> = rows.iter().map(|r| r["cell"].as_str().unwrap()).collect();
    assert_eq!(cells, vec!["od10", "hbt", "od128"]);
    assert!(rows.iter().all(|r| r["status"] == "ok"));
}

#[test]
fn ablate_marks_missing_cell_failed_without_killing_others() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--out", "ds", "--trials", "10", "--seed", "6", "--snr", "2.0"]);
    // Only od10 is preprocessed; hbt and od128 cells must fail in isolation.
    ok(
        dir,
        &["preprocess", "--data", "ds", "--modality", "fnirs", "--repr", "od10",
          "--out", "prep", "--seed", "6"],
    );
    let out = mecasa(
        dir,
        &["ablate", "--grid", "repr", "--data", "prep", "--modality", "fnirs",
          "--dims", "16-32", "--seed", "6", "--out", "ab",
          "--epochs", "1", "--folds", "0", "--lr", "0.001"],
    );
    assert!(!out.status.success(), "missing cells must fail the exit code");
    let rep = read_json(&dir.join("ab/ablate.json"));
    let rows = rep["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["status"], "ok");
    assert_eq!(rows[1]["status"], "failed");
    assert_eq!(rows[2]["status"], "failed");
}

#[test]
fn bench_reports_flops_and_exponents() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &["bench", "--n-list", "64,128,256", "--d", "16", "--reps", "3",
          "--out", "bench", "--seed", "0"],
    );
    let rep = read_json(&dir.join("bench/bench.json"));
    assert_eq!(rep["rows"].as_array().unwrap().len(), 3);
    assert!(rep["casa_exponent"].as_f64().unwrap() < rep["softmax_exponent"].as_f64().unwrap());
    // Analytic counts are exactly linear/quadratic in N.
    let rows = rep["rows"].as_array().unwrap();
    let c0 = rows[0]["casa_flops"].as_u64().unwrap();
    let c2 = rows[2]["casa_flops"].as_u64().unwrap();
    assert!((c2 as f64 / c0 as f64 - 4.0).abs() < 0.2);
}

#[test]
fn invalid_flags_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // repr only makes sense for fNIRS.
    let out = mecasa(dir, &["train", "--modality", "eeg", "--repr", "hbt", "--data", "x", "--out", "y"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("repr"));
    // dims must be positive integers.
    let out = mecasa(dir, &["train", "--dims", "16-zero", "--data", "x", "--out", "y"]);
    assert!(!out.status.success());
    // missing dataset root.
    let out = mecasa(dir, &["validate", "--data", "nope", "--out", "y"]);
    assert!(!out.status.success());
}

#[test]
fn validate_flags_corrupted_payload() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--out", "ds", "--trials", "10", "--seed", "9", "--snr", "1.0"]);
    // Truncate one payload.
    let payload = dir.join("ds/payloads/t003_eeg.bin");
    let bytes = std::fs::read(&payload).unwrap();
    std::fs::write(&payload, &bytes[..bytes.len() - 8]).unwrap();
    let out = mecasa(dir, &["validate", "--data", "ds", "--out", "rep"]);
    assert!(!out.status.success());
    let rep = read_json(&dir.join("rep/validate.json"));
    assert_eq!(rep["all_valid"], serde_json::json!(false));
    let invalid: Vec<_> = rep["rows"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["status"] == "invalid")
        .collect();
    assert_eq!(invalid.len(), 1);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("run.toml"),
        "trials = 10\nseed = 11\nsnr = 1.5\nout = \"from_file\"\n",
    )
    .unwrap();
    // out comes from the file; trials/seed from the file; snr overridden.
    ok(dir, &["synth", "--config", "run.toml", "--snr", "0.5"]);
    let rep = read_json(&dir.join("from_file/synth.json"));
    assert_eq!(rep["trials"], 10);
    assert_eq!(rep["config"]["seed"], 11);
    assert_eq!(rep["config"]["snr"], 0.5);
}
