use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use greedy_dim_cli::config::{CohortConfig, ExperimentConfig};
use greedy_dim_cli::experiment::{run_experiment, write_outputs, Summary, ROWS_FILE, SUMMARY_FILE};
use greedy_dim_cli::table::read_rows;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_greedy-dim"));
    c.env_remove("GREEDY_DIM_OUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let cfg = ExperimentConfig {
        cohort: CohortConfig {
            identities: 30,
            pairs: 8,
            ..CohortConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let path = dir.join("small.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

#[test]
fn verify_single_suite_succeeds() {
    let out = run(&["verify", "radam"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("PASS radam"), "{stdout}");
}

#[test]
fn configuration_errors_exit_with_two() {
    assert_eq!(run(&["verify", "theorem3"]).status.code(), Some(2));
    assert_eq!(
        run(&["nfe", "--variant", "dim_plus"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["nfe", "--fmr", "1.5"]).status.code(), Some(2));
    assert_eq!(
        run(&["experiment", "--config", "/nonexistent/config.toml"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["morph", "--variant", "dim,greedy_s"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn unwritable_output_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = run(&[
        "experiment",
        "--config",
        cfg.to_str().unwrap(),
        "--variant",
        "dim",
        "--out-dir",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn nfe_lists_every_variant() {
    let out = run(&["nfe"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    for (name, nfe) in [
        ("dim", "350"),
        ("morph_pipe", "2350"),
        ("greedy_s", "350"),
        ("greedy_star", "270"),
    ] {
        let line = stdout
            .lines()
            .find(|l| l.split_whitespace().next() == Some(name))
            .unwrap_or_else(|| panic!("no line for {name}"));
        let cols: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(&cols[4..], [nfe, nfe], "{line}");
    }
}

#[test]
fn morph_prints_one_result() {
    let out = run(&["morph", "--variant", "greedy_star", "--pair", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["pair_id"], 3);
    assert_eq!(v["variant"], "greedy_star");
    assert_eq!(v["nfe"], 270);
    assert_eq!(v["x0_ab"].as_array().unwrap().len(), 8);
}

#[test]
fn environment_sets_output_directory_and_flag_overrides_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (env_dir, flag_dir) = (dir.path().join("env"), dir.path().join("flag"));
    let status = bin()
        .args([
            "experiment",
            "--config",
            cfg.to_str().unwrap(),
            "--variant",
            "dim",
        ])
        .env("GREEDY_DIM_OUT_DIR", &env_dir)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(env_dir.join(SUMMARY_FILE).exists());
    let status = bin()
        .args([
            "experiment",
            "--config",
            cfg.to_str().unwrap(),
            "--variant",
            "dim",
        ])
        .args(["--out-dir", flag_dir.to_str().unwrap()])
        .env("GREEDY_DIM_OUT_DIR", &env_dir)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(flag_dir.join(SUMMARY_FILE).exists());
}

#[test]
fn experiment_outputs_are_byte_identical_across_runs_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut outputs = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "4")] {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "experiment",
            "--config",
            cfg.to_str().unwrap(),
            "--jobs",
            jobs,
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        outputs.push((
            fs::read(out_dir.join(ROWS_FILE)).unwrap(),
            fs::read(out_dir.join(SUMMARY_FILE)).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn emitted_rows_parse_back_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&small_config(dir.path())).unwrap();
    cfg.seed = 99;
    let out = run_experiment(&cfg).unwrap();
    write_outputs(&out, cfg.evaluation.seeds.len(), dir.path()).unwrap();
    let parsed = read_rows(fs::File::open(dir.path().join(ROWS_FILE)).unwrap()).unwrap();
    assert_eq!(parsed, out.rows);
    let summary: Summary =
        serde_json::from_slice(&fs::read(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary, out.summary);
}

#[test]
fn metrics_subcommand_reproduces_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("out");
    let status = run(&[
        "experiment",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ])
    .status;
    assert!(status.success());
    let summary: Summary =
        serde_json::from_slice(&fs::read(out_dir.join(SUMMARY_FILE)).unwrap()).unwrap();
    let out = run(&[
        "metrics",
        "--csv",
        out_dir.join(ROWS_FILE).to_str().unwrap(),
        "--summary",
        out_dir.join(SUMMARY_FILE).to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report.len(), summary.variants.len());
    for entry in report {
        let v = summary
            .variants
            .iter()
            .find(|s| s.variant.to_string() == entry["variant"].as_str().unwrap())
            .unwrap();
        let mmpmr: Vec<f64> = serde_json::from_value(entry["mmpmr"].clone()).unwrap();
        let map: Vec<f64> = serde_json::from_value(entry["map_1c"].clone()).unwrap();
        assert_eq!(mmpmr, v.mmpmr);
        assert_eq!(map, v.map_1c);
    }

    let thresholds: Vec<String> = summary.thresholds.iter().map(|t| t.to_string()).collect();
    let out = run(&[
        "metrics",
        "--csv",
        out_dir.join(ROWS_FILE).to_str().unwrap(),
        "--threshold",
        &thresholds.join(","),
        "--variant",
        "dim",
    ]);
    let report: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report.len(), 1);
    assert_eq!(report[0]["variant"], "dim");
}
