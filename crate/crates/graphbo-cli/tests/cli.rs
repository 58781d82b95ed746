//! Black-box tests of the installed binary: exit codes, override flags, and
//! file outputs.

use std::path::Path;
use std::process::{Command, Output};

fn graphbo(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphbo"))
        .args(args)
        .current_dir(dir)
        .env_remove("GRAPHBO_OUT_ROOT")
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("cfg.json");
    std::fs::write(
        &path,
        r#"{
  "graph": {"type": "sbm", "n": 18, "blocks": 2, "p_in": 0.7, "p_out": 0.1},
  "objective": {"type": "bandlimited", "k": 3},
  "methods": [
    {"method": "spectral_bo", "ei": "max",
     "train": {"d1": 6, "d2": 3, "hidden_q": [], "hidden_f": [], "lr_gamma": 0.05,
               "batch_edges": 32, "batch_pairs": 32, "batch_nodes": 18, "epochs_per_round": 4},
     "epochs_first_round": 10, "gp_fit_steps": 2},
    {"method": "random"}
  ],
  "t": 3, "n0": 2, "seeds": [1, 2]
}"#,
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = graphbo(&["--help"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    assert!(graphbo(&["--version"], dir.path()).status.success());
}

#[test]
fn unknown_flags_exit_one_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = graphbo(&["run", "--config", "x.json", "--frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
    // missing subcommand is usage too
    assert_eq!(graphbo(&[], dir.path()).status.code(), Some(1));
}

#[test]
fn missing_or_invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = graphbo(&["run", "--config", "absent.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    let out = graphbo(&["run", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn over_budget_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = graphbo(&["run", "--config", &cfg, "--t", "30"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds"));
}

#[test]
fn run_writes_all_outputs_and_respects_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("results");
    let out = graphbo(
        &[
            "run",
            "--config",
            &cfg,
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "7",
            "--kernel",
            "matern",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in ["per_run.csv", "aggregate.csv", "timings.csv", "regret.svg"] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let per_run = std::fs::read_to_string(out_dir.join("per_run.csv")).unwrap();
    // --kernel matern renames the method; --seed 7 replaces the seed list
    assert!(per_run.contains("spectral_bo_matern,7,"));
    assert!(!per_run.contains(",1,"));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("final regret"));
}

#[test]
fn relative_out_dir_resolves_under_the_env_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_graphbo"))
        .args(["baseline", "--config", &cfg, "--out", "nested/run1", "--t", "2"])
        .current_dir(dir.path())
        .env("GRAPHBO_OUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("nested/run1/per_run.csv").exists());
}

#[test]
fn baseline_subcommand_drops_the_optimizer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("b");
    let out = graphbo(
        &["baseline", "--config", &cfg, "--out", out_dir.to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success());
    let per_run = std::fs::read_to_string(out_dir.join("per_run.csv")).unwrap();
    assert!(!per_run.contains("spectral_bo"));
    assert!(per_run.contains("random"));
}

#[test]
fn phase_writes_a_csv_and_reports_rates() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("phase");
    let out = graphbo(
        &[
            "phase", "--rank", "1", "--n", "10", "--grid", "5,40", "--trials", "1", "--steps",
            "100", "--out", out_dir.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("success rate"), "{stdout}");
    let csv = std::fs::read_to_string(out_dir.join("phase.csv")).unwrap();
    assert!(csv.starts_with("omega_size,trial,rel_error,success,sampler_kind\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn ablate_writes_the_grid_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("abl");
    let out = graphbo(
        &[
            "ablate", "--config", &cfg, "--d1", "4,6", "--d2", "2", "--seed", "3", "--t", "2",
            "--out", out_dir.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    assert!(csv.starts_with("d1,d2,mean_final_gap,ci95\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn stats_reports_pattern_statistics_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("omega.txt");
    std::fs::write(&edges, "0 1\n1 2\n2 3\n3 0 0.5\n").unwrap();
    let out = graphbo(&["stats", "--input", edges.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let parsed: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("stdout is a JSON object");
    assert_eq!(parsed["n"], 4);
    assert_eq!(parsed["observed_pairs"], 4);
    assert_eq!(parsed["stats"]["avg_degree"], 2.0);
    // weighted switch changes the spectral statistic
    let out_w = graphbo(
        &["stats", "--input", edges.to_str().unwrap(), "--weighted"],
        dir.path(),
    );
    assert!(out_w.status.success());
    let parsed_w: serde_json::Value = serde_json::from_slice(&out_w.stdout).unwrap();
    assert_ne!(parsed_w["stats"]["lambda2"], parsed["stats"]["lambda2"]);

    let missing = graphbo(&["stats", "--input", "nope.txt"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}
