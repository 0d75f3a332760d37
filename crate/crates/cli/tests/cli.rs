use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn sdpca(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdpca"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn error_record(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("JSON error record");
    serde_json::from_str(line).unwrap()
}

#[test]
fn ingest_reports_the_dropped_column() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("five_columns.csv");
    let out = sdpca(&["ingest", "--input", input.to_str().unwrap(), "--transform", "false"], dir.path());
    assert!(out.status.success());
    let report = read(dir.path(), "drop_report.jsonl");
    let lines: Vec<serde_json::Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["name"], "D");
    let stdout: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stdout["n_series"], 4);
    assert_eq!(stdout["n_obs"], 4);
    let again = sdpca::ingest_fredmd(dir.path().join("panel.csv")).unwrap();
    assert_eq!(again.panel.names(), ["A", "B", "C", "E"]);
}

#[test]
fn evaluate_is_byte_reproducible() {
    let input = fixture("fredmd_synthetic.csv");
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let out = sdpca(
            &[
                "evaluate",
                "--input",
                input.to_str().unwrap(),
                "--target",
                "INDPRO",
                "--methods",
                "sdpca,sw,ar:1",
                "--train-frac",
                "0.9",
                "--seed",
                "11",
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (read(dir.path(), "results.csv"), read(dir.path(), "summary.json"), read(dir.path(), "forecasts.csv"))
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    assert_eq!(a.0.lines().count(), 1 + 3);
}

#[test]
fn simulate_writes_reports_manifest_and_draws() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdpca(
        &[
            "simulate", "--reps", "2", "--t", "80", "--n-series", "30", "--n-nonzero", "10", "--save-draws", "--jobs",
            "1",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "results.csv");
    assert_eq!(csv.lines().next(), Some("rep,method,k,q,h,msfe,rmsfe"));
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
    let manifest = read(dir.path(), "manifest.jsonl");
    let head: serde_json::Value = serde_json::from_str(manifest.lines().next().unwrap()).unwrap();
    assert_eq!(head["config"]["reps"], 2);
    assert_eq!(head["seed"], 1234);
    assert!(head["rng"].as_str().unwrap().contains("ChaCha8"));
    let draw = sdpca::ingest_fredmd(dir.path().join("draws/rep_0001.csv")).unwrap();
    assert_eq!((draw.panel.n_obs(), draw.panel.n_series()), (80, 31));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[common]\nseed = 99\n\n[simulate]\nreps = 1\nt = 60\nn_series = 20\nn_nonzero = 5\nmode = \"insample\"\n",
    )
    .unwrap();
    let out = sdpca(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "5"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let head: serde_json::Value = serde_json::from_str(read(dir.path(), "manifest.jsonl").lines().next().unwrap()).unwrap();
    assert_eq!(head["seed"], 5);
    assert_eq!(head["config"]["t"], 60);
    let csv = read(dir.path(), "results.csv");
    // in-sample only: the rmsfe column is empty
    assert!(csv.lines().skip(1).all(|l| l.ends_with(',')));
}

#[test]
fn forecast_emits_models_loadings_and_supervision() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("fredmd_synthetic.csv");
    let out = sdpca(
        &["forecast", "--input", input.to_str().unwrap(), "--target", "INDPRO", "--methods", "sdpca-lasso:3,ar:2", "--h", "1,3"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<serde_json::Value> = read(dir.path(), "forecasts.jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    for l in &lines {
        assert!(l["forecast"].as_f64().unwrap().is_finite());
        assert!(l["model"]["coefficients"].is_array());
    }
    assert!(lines[0]["model"]["lambda"].as_f64().is_some());
    assert!(dir.path().join("loadings_sdPCA_lasso_k3_q2_h1.csv").is_file());
    let sup: serde_json::Value = serde_json::from_str(&read(dir.path(), "supervision_sdPCA_lasso_k3_q2_h3.json")).unwrap();
    assert_eq!(sup.as_array().unwrap().len(), 122);
}

#[test]
fn scan_r2_covers_every_predictor() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("fredmd_synthetic.csv");
    let out = sdpca(
        &["scan-r2", "--input", input.to_str().unwrap(), "--target", "INDPRO", "--q", "3", "--lag-criterion", "aic"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "r2.csv");
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 122);
    for r in &rows {
        let q: usize = r[3].parse().unwrap();
        let r2: f64 = r[4].parse().unwrap();
        assert!((1..=3).contains(&q));
        assert!((0.0..=1.0).contains(&r2));
    }
}

#[test]
fn bad_input_exits_nonzero_with_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdpca(&["evaluate", "--input", "/nonexistent.csv", "--target", "y"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"]["kind"], "InvalidConfig");

    let out = sdpca(&["evaluate", "--input", fixture("fredmd_synthetic.csv").to_str().unwrap(), "--target", "GDP"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["command"], "evaluate");
}

#[test]
fn cells_without_any_forecast_are_hard_errors() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("fredmd_synthetic.csv");
    let out = sdpca(
        &["evaluate", "--input", input.to_str().unwrap(), "--target", "INDPRO", "--methods", "sw:500", "--train-frac", "0.95"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_record(&out)["error"]["kind"], "HardErrorCells");
    // the reports are still written
    assert!(dir.path().join("results.csv").is_file());
    assert!(!read(dir.path(), "skipped_windows.jsonl").is_empty());
}
