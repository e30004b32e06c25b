//! End-to-end checks of the command layer and the binary surface.

use std::fs;
use std::path::Path;
use std::process::Command;

use sthmm_cli::commands::{
    cmd_benchmark, cmd_fit, cmd_preprocess_relative_variation, cmd_select_k, cmd_simulate,
    load_input, FitSettings,
};
use sthmm::samplers::Algorithm;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sthmm"))
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn simulate_is_deterministic_and_scenario_d_has_three_states() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    cmd_simulate("A", 2, 7, 50, &out_a).unwrap();
    cmd_simulate("A", 2, 7, 50, &out_b).unwrap();
    for r in ["replicate_000", "replicate_001"] {
        for f in ["observations.csv", "edges.txt", "truth.json"] {
            assert_eq!(
                read(&out_a.join(r).join(f)),
                read(&out_b.join(r).join(f)),
                "{r}/{f} differs between identical runs"
            );
        }
    }
    let out_d = dir.path().join("d");
    cmd_simulate("D", 1, 3, 50, &out_d).unwrap();
    let truth: serde_json::Value =
        serde_json::from_str(&read(&out_d.join("replicate_000/truth.json"))).unwrap();
    assert_eq!(truth["k"], 3);
    assert_eq!(truth["emission"]["means"][1][1], 5.0);
}

#[test]
fn invalid_scenario_fails_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "simulate",
            "--scenario",
            "Q",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!status.status.success());
    let stderr = String::from_utf8_lossy(&status.stderr);
    assert!(stderr.contains("unknown scenario"), "stderr: {stderr}");
}

#[test]
fn fit_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    cmd_simulate("A", 1, 11, 100, &data_dir).unwrap();
    let bundle = data_dir.join("replicate_000");
    let dataset = load_input(Some(&bundle), None, None).unwrap();
    let settings = FitSettings {
        iterations: 160,
        burn_in: 40,
        seed: 5,
        relabel: true,
        field_thinning: 4,
        ..FitSettings::default()
    };
    let out = dir.path().join("fit");
    let output = cmd_fit(&dataset, 2, &settings, &out).unwrap();
    assert_eq!(output.n_draws(), 120);
    for f in [
        "chain.csv",
        "fields.csv",
        "acceptance.csv",
        "report.json",
        "report_params.csv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let chain = read(&out.join("chain.csv"));
    let header = chain.lines().next().unwrap();
    assert!(header.starts_with("beta_1,beta_star_1,gamma_1_2"));
    assert!(header.contains("mu_1_1"));
    assert!(header.contains("sigma_2_1_2"));
    assert_eq!(chain.lines().count(), 121);
    let report: serde_json::Value = serde_json::from_str(&read(&out.join("report.json"))).unwrap();
    assert!(report["parameters"].as_array().unwrap().len() >= 8);
    assert!(report["dic"].is_number());
    assert!(report["misclassification"].is_number());
}

#[test]
fn fit_missing_edges_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("obs.csv");
    fs::write(&obs, "site,time,y1\n1,1,0.5\n").unwrap();
    let missing = dir.path().join("nope.txt");
    let err = load_input(None, Some(&obs), Some(&missing)).unwrap_err();
    assert!(err.to_string().contains("nope.txt"), "{err}");
    // Same through the binary: nonzero exit, path in the message.
    let output = bin()
        .args([
            "fit",
            "--obs",
            obs.to_str().unwrap(),
            "--edges",
            missing.to_str().unwrap(),
            "--k",
            "2",
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("nope.txt"));
}

#[test]
fn preprocess_relative_variation_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("levels.csv");
    fs::write(
        &input,
        "site,time,rain\n1,1,1.0\n1,2,1.1\n2,1,2.0\n2,2,2.0\n",
    )
    .unwrap();
    let output = dir.path().join("obs.csv");
    cmd_preprocess_relative_variation(&input, &output).unwrap();
    let text = read(&output);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "site,time,y1");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    let first: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(first[0], "1");
    assert_eq!(first[1], "1");
    let y: f64 = first[2].parse().unwrap();
    assert!((y - 10.0).abs() < 1e-9, "relative variation {y}");
    assert_eq!(rows[1], "2,1,0");
}

#[test]
fn preprocess_fails_on_zero_denominator() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("levels.csv");
    fs::write(&input, "site,time,rain\n1,1,0.0\n1,2,1.0\n").unwrap();
    let output = dir.path().join("obs.csv");
    let err = cmd_preprocess_relative_variation(&input, &output).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("site 1"), "{msg}");
    assert!(msg.contains("time 1"), "{msg}");
}

#[test]
fn benchmark_single_replicate_mae_is_single_error() {
    let dir = tempfile::tempdir().unwrap();
    let settings = FitSettings {
        iterations: 150,
        burn_in: 50,
        seed: 30,
        ..FitSettings::default()
    };
    let out = dir.path().join("bench");
    let summary = cmd_benchmark("A", 1, &settings, &out).unwrap();
    assert_eq!(summary.rows.len(), 8);
    // With D = 1 the MAE is the absolute error of the single estimate;
    // cross-check against estimates.csv.
    let est = read(&out.join("estimates.csv"));
    for row in &summary.rows {
        let line = est
            .lines()
            .find(|l| l.starts_with(&format!("0,exchange,{},", row.parameter)))
            .unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        let estimate: f64 = fields[3].parse().unwrap();
        let truth: f64 = fields[4].parse().unwrap();
        assert!(((estimate - truth).abs() - row.exchange).abs() < 1e-12);
    }
}

#[test]
fn select_k_trivial_range() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    cmd_simulate("A", 1, 13, 100, &data_dir).unwrap();
    let dataset = load_input(Some(&data_dir.join("replicate_000")), None, None).unwrap();
    let settings = FitSettings {
        iterations: 150,
        burn_in: 50,
        seed: 2,
        ..FitSettings::default()
    };
    let out = dir.path().join("select");
    let summary = cmd_select_k(&dataset, 1, 1, &settings, &out).unwrap();
    assert_eq!(summary.selected_k, 1);
    assert_eq!(summary.evaluated.len(), 1);
    assert!(!summary.stopped_early);
    let table = read(&out.join("dic.csv"));
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn config_file_layering_and_unknown_key_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[simulate]\nscenario = \"A\"\nreplicates = 1\nseed = 9\nburn_sweeps = 40\n",
    )
    .unwrap();
    let out = dir.path().join("from_file");
    let status = bin()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "simulate",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("replicate_000/observations.csv").exists());
    // A flag overrides the file: scenario D instead of A.
    let out2 = dir.path().join("override");
    let status = bin()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "simulate",
            "--scenario",
            "D",
            "--out",
            out2.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let truth: serde_json::Value =
        serde_json::from_str(&read(&out2.join("replicate_000/truth.json"))).unwrap();
    assert_eq!(truth["k"], 3);
    // Unknown keys are fatal.
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[simulate]\nscenari = \"A\"\n").unwrap();
    let output = bin()
        .args([
            "--config",
            bad.to_str().unwrap(),
            "simulate",
            "--scenario",
            "A",
            "--out",
            dir.path().join("x").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("scenari"));
}

#[test]
fn noisy_exchange_runs_through_fit() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    cmd_simulate("A", 1, 21, 100, &data_dir).unwrap();
    let dataset = load_input(Some(&data_dir.join("replicate_000")), None, None).unwrap();
    let settings = FitSettings {
        algorithm: Algorithm::NoisyExchange,
        noisy_j: 3,
        iterations: 160,
        burn_in: 40,
        seed: 8,
        ..FitSettings::default()
    };
    let out = dir.path().join("fit");
    let output = cmd_fit(&dataset, 2, &settings, &out).unwrap();
    assert_eq!(output.n_draws(), 120);
}
