//! End-to-end tests against the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

use effnoise::data_model::{write_csv, Dataset, RngSpec};
use effnoise::effective_noise::estimate_lambda_hat;
use ndarray::{Array1, Array2};
use rand::Rng;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_effnoise"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("failed to spawn binary")
}

/// A small deterministic dataset written as CSV with header y,x1..xp.
fn fixture(dir: &Path, n: usize, p: usize, seed: u64) -> (std::path::PathBuf, Dataset) {
    let mut rng = RngSpec::new(seed).substream("fixture", 0);
    let x = Array2::from_shape_fn((n, p), |_| rng.gen_range(-1.0..1.0));
    let y = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0));
    let data = Dataset::new(x, y, None).unwrap();
    let path = dir.join("data.csv");
    write_csv(&data, &path).unwrap();
    (path, data)
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn estimate_matches_library_and_is_versioned() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, data) = fixture(dir.path(), 25, 8, 42);
    let out = dir.path().join("out");
    let output = run(&[
        "estimate",
        "--data",
        csv.to_str().unwrap(),
        "--response",
        "y",
        "--alpha",
        "0.1",
        "--l",
        "40",
        "--m",
        "30",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");

    let json = read_json(&out.join("estimate.json"));
    assert_eq!(json["schema_version"], "1");

    let expected = estimate_lambda_hat(&data, 0.1, 40, 30, &RngSpec::new(7)).unwrap();
    assert_eq!(
        json["lambda_hat"].as_f64().unwrap().to_bits(),
        expected.lambda_hat.to_bits()
    );
    assert_eq!(json["m_hat"].as_u64().unwrap() as usize, expected.m_hat);
    assert_eq!(json["settings"]["seed"], 7);
}

#[test]
fn outputs_are_reproducible_and_thread_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, _) = fixture(dir.path(), 30, 10, 43);
    let mut bytes = Vec::new();
    for (label, threads) in [("a", "1"), ("b", "2"), ("c", "1")] {
        let out = dir.path().join(label);
        let output = run(&[
            "--threads",
            threads,
            "estimate",
            "--data",
            csv.to_str().unwrap(),
            "--response",
            "y",
            "--seed",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(output.status.success(), "{output:?}");
        bytes.push(std::fs::read(out.join("estimate.json")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1], "output depends on --threads");
    assert_eq!(bytes[0], bytes[2], "output not reproducible");
}

#[test]
fn headerless_csv_uses_index_response() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("raw.csv"),
        "1.0,0.5,0.25\n-1.0,0.5,0.3\n0.5,-0.2,0.1\n0.2,0.9,-0.4\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let output = run(&[
        "estimate",
        "--data",
        dir.path().join("raw.csv").to_str().unwrap(),
        "--response",
        "0",
        "--no-header",
        "--l",
        "10",
        "--m",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    assert!(out.join("estimate.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, _) = fixture(dir.path(), 10, 3, 44);
    let csv = csv.to_str().unwrap();

    // clap-level usage errors
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["estimate", "--bogus-flag"]).status.code(), Some(1));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));

    // missing file
    let output = run(&[
        "estimate", "--data", "/nonexistent.csv", "--response", "y",
    ]);
    assert_eq!(output.status.code(), Some(1));

    // unknown response column
    let output = run(&["estimate", "--data", csv, "--response", "nope"]);
    assert_eq!(output.status.code(), Some(1));

    // unparseable cell, with its location in the message
    std::fs::write(dir.path().join("bad.csv"), "y,x1\n1.0,oops\n2.0,1.0\n").unwrap();
    let output = run(&[
        "estimate",
        "--data",
        dir.path().join("bad.csv").to_str().unwrap(),
        "--response",
        "y",
    ]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("oops"), "stderr: {stderr}");

    // invalid alpha
    let output = run(&[
        "estimate", "--data", csv, "--response", "y", "--alpha", "1.5",
    ]);
    assert_eq!(output.status.code(), Some(1));

    // one-based --set-a rejects 0
    let output = run(&[
        "test-partial", "--data", csv, "--response", "y", "--set-a", "0",
    ]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn partial_with_empty_a_matches_global() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, _) = fixture(dir.path(), 25, 8, 45);
    let csv = csv.to_str().unwrap();
    let common = ["--response", "y", "--l", "30", "--m", "20", "--seed", "5"];

    let out_g = dir.path().join("global");
    let mut args = vec!["test", "--data", csv];
    args.extend_from_slice(&common);
    args.extend_from_slice(&["--out", out_g.to_str().unwrap()]);
    assert!(run(&args).status.success());

    let out_p = dir.path().join("partial");
    let mut args = vec!["test-partial", "--data", csv];
    args.extend_from_slice(&common);
    args.extend_from_slice(&["--out", out_p.to_str().unwrap()]);
    assert!(run(&args).status.success());

    let global = read_json(&out_g.join("test.json"));
    let partial = read_json(&out_p.join("test.json"));
    assert_eq!(global["test"], "global");
    assert_eq!(partial["test"], "partial");
    for field in ["statistic", "critical_value", "reject", "alpha"] {
        assert_eq!(global[field], partial[field], "field {field}");
    }
}

#[test]
fn test_partial_with_nonempty_a() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, _) = fixture(dir.path(), 25, 8, 46);
    let out = dir.path().join("out");
    let output = run(&[
        "test-partial",
        "--data",
        csv.to_str().unwrap(),
        "--response",
        "y",
        "--set-a",
        "1,3",
        "--l",
        "20",
        "--m",
        "15",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let json = read_json(&out.join("test.json"));
    assert_eq!(json["a"], serde_json::json!([1, 3]));
    assert_eq!(json["detail"]["projection_rank"], 2);
    // B is the complement of A, zero-based in the detail payload
    assert_eq!(json["detail"]["a"], serde_json::json!([0, 2]));
    assert_eq!(json["detail"]["b"].as_array().unwrap().len(), 6);
}

#[test]
fn calibrate_emits_report() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, _) = fixture(dir.path(), 25, 8, 47);
    let out = dir.path().join("out");
    let output = run(&[
        "calibrate",
        "--data",
        csv.to_str().unwrap(),
        "--response",
        "y",
        "--delta",
        "0.1",
        "--phi",
        "1.0",
        "--l",
        "20",
        "--m",
        "15",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let json = read_json(&out.join("calibrate.json"));
    assert_eq!(json["schema_version"], "1");
    assert!(json["ell_infty_bound"].is_number());
    assert!(json["lambda_hat"].as_f64().unwrap() > 0.0);
    assert_eq!(json["delta"].as_f64().unwrap(), 0.1);
}

#[test]
fn simulate_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "n": 30,
        "p": 15,
        "kappa": 0.25,
        "design_law": {"law": "gaussian"},
        "noise_law": {"law": "gaussian", "sigma": 1.0},
        "snr": 0.5,
        "support_size": 3,
        "alpha": 0.05,
        "l": 20,
        "m": 15,
        "n_runs": 4,
        "delta": 0.0,
        "seed": 99,
        "oracle_draws": 50,
        "cv_folds": 5
    });
    let config_path = dir.path().join("scenario.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let out = dir.path().join("results");
    let output = run(&[
        "simulate",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");

    for name in [
        "losses.csv",
        "tests.csv",
        "summary.json",
        "lambda_hist.svg",
        "lambda_hist.csv",
        "hamming_hist.svg",
        "hamming_hist.csv",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }

    // losses.csv: 3 methods x 4 replicates
    let losses = std::fs::read_to_string(out.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 1 + 3 * 4);
    assert!(losses.starts_with("replicate,method,lambda,"));

    // tests.csv: 3 alphas x 3 SNR levels
    let tests = std::fs::read_to_string(out.join("tests.csv")).unwrap();
    assert_eq!(tests.lines().count(), 1 + 9);

    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["schema_version"], "1");
    assert!(summary["lambda_star"].is_number());
    assert_eq!(summary["power"].as_array().unwrap().len(), 9);
    assert_eq!(summary["losses_failed"], 0);

    let hist = effnoise::cli::read_histogram_csv(&out.join("lambda_hist.csv")).unwrap();
    assert_eq!(hist.series.len(), 1);
    let total: usize = hist.series[0].1.iter().sum();
    assert_eq!(total, 4);

    // skip-flags leave only the summary
    let out2 = dir.path().join("results2");
    let output = run(&[
        "simulate",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
        "--no-tests",
        "--no-losses",
    ]);
    assert!(output.status.success(), "{output:?}");
    assert!(out2.join("summary.json").exists());
    assert!(!out2.join("losses.csv").exists());
    assert!(!out2.join("tests.csv").exists());
}
