//! End-to-end tests of the compiled binary: exit codes, output shapes,
//! cross-method agreement, and byte-level determinism of reruns.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const CONSTANT: &str = r#"{
    "lambda": {"kind": "constant", "value": 1.0},
    "mu": {"kind": "constant", "value": 0.5},
    "horizon": 10.0
}"#;

const SINUSOID: &str = r#"{
    "lambda": {"kind": "sinusoid", "base": 1.0, "amp": 0.5, "omega": 2.0, "phase": 0.0},
    "mu": {"kind": "constant", "value": 0.5},
    "horizon": 10.0
}"#;

const NO_DEATHS: &str = r#"{
    "lambda": {"kind": "constant", "value": 1.0},
    "mu": {"kind": "constant", "value": 0.0},
    "horizon": 10.0
}"#;

fn write_config(dir: &TempDir, text: &str) -> PathBuf {
    let path = dir.path().join("profile.json");
    std::fs::write(&path, text).unwrap();
    path
}

/// Runs the binary with a scrubbed tolerance environment so an ambient
/// BD_DEFAULT_TOL cannot leak into unrelated tests.
fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bd-cli"))
        .env_remove("BD_DEFAULT_TOL")
        .args(args)
        .output()
        .unwrap()
}

fn run_with_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bd-cli"))
        .env(key, value)
        .args(args)
        .output()
        .unwrap()
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr_str(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

/// Data rows of a CSV body: header and `#` comment lines stripped.
fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn transition(config: &Path, n: &str, m: &str, t: &str, method: &str) -> Output {
    run(&[
        "transition",
        "--config",
        config.to_str().unwrap(),
        "--n",
        n,
        "--m",
        m,
        "--t",
        t,
        "--method",
        method,
    ])
}

#[test]
fn transition_at_time_zero_is_the_identity() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, CONSTANT);
    let out = transition(&config, "5", "5", "0", "auto");
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_str(&out));

    let v = json(&out);
    assert_eq!(v["probability"].as_f64(), Some(1.0));
    // The spectral form does not exist at t = 0, so auto falls back.
    assert_eq!(v["method"].as_str(), Some("expr1"));
    assert!(v["alpha_spectral"].is_null());
    assert!(v["truncation_diagnostics"].is_null());
    assert_eq!(v["g_functions"]["g3"].as_f64(), Some(0.0));
    // Probabilities print with 17 significant digits.
    assert!(stdout_str(&out).contains("\"probability\": 1.0000000000000000e0"));
}

#[test]
fn closed_forms_agree_through_the_cli() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, SINUSOID);
    let a = transition(&config, "3", "4", "1.5", "expr1");
    let b = transition(&config, "3", "4", "1.5", "expr2");
    assert_eq!(a.status.code(), Some(0), "stderr: {}", stderr_str(&a));
    assert_eq!(b.status.code(), Some(0), "stderr: {}", stderr_str(&b));

    let (va, vb) = (json(&a), json(&b));
    assert_eq!(va["method"].as_str(), Some("expr1"));
    assert_eq!(vb["method"].as_str(), Some("expr2"));
    let (pa, pb) = (
        va["probability"].as_f64().unwrap(),
        vb["probability"].as_f64().unwrap(),
    );
    assert!(
        (pa - pb).abs() <= 1e-9,
        "methods disagree: expr1 {pa} vs expr2 {pb}"
    );
    // The spectral route reports how far the sum ran.
    assert!(vb["truncation_diagnostics"]["x_max_used"].as_u64().unwrap() > 0);
    assert!(va["g_functions"]["g2"].as_f64().unwrap() > 0.0);
}

#[test]
fn malformed_config_exits_one_without_partial_output() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "{ not json");
    let out = transition(&config, "1", "1", "1", "auto");
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty(), "stdout: {}", stdout_str(&out));
    assert!(stderr_str(&out).contains("invalid config"));
}

#[test]
fn unknown_config_key_is_named_in_the_error() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        &dir,
        r#"{"lambda": {"kind": "constant", "value": 1.0},
            "mu": {"kind": "constant", "value": 0.5},
            "horizonn": 10.0}"#,
    );
    let out = transition(&config, "1", "1", "1", "auto");
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_str(&out).contains("horizonn"),
        "stderr should name the key: {}",
        stderr_str(&out)
    );
}

#[test]
fn vanished_death_rate_refuses_the_spectral_form() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, NO_DEATHS);
    let out = transition(&config, "2", "3", "1", "expr2");
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(
        stderr_str(&out).contains("expr1"),
        "error should point at the finite sum: {}",
        stderr_str(&out)
    );
    // The finite sum itself is fine there.
    let ok = transition(&config, "2", "3", "1", "expr1");
    assert_eq!(ok.status.code(), Some(0), "stderr: {}", stderr_str(&ok));
}

#[test]
fn km_on_varying_rates_exits_degenerate() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, SINUSOID);
    let out = transition(&config, "2", "3", "1", "km");
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_str(&out).contains("constant rates"));
}

#[test]
fn km_without_deaths_exits_degenerate() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, NO_DEATHS);
    let out = transition(&config, "2", "3", "1", "km");
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr_str(&out).contains("expr1"),
        "error should point at the finite sum: {}",
        stderr_str(&out)
    );
}

#[test]
fn master_method_answers_to_its_oracle_alias() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, CONSTANT);
    let named = transition(&config, "2", "3", "1", "master");
    let alias = transition(&config, "2", "3", "1", "oracle");
    assert_eq!(named.status.code(), Some(0), "stderr: {}", stderr_str(&named));
    assert_eq!(named.stdout, alias.stdout);
    assert_eq!(json(&named)["method"].as_str(), Some("master"));
}

#[test]
fn validate_passes_on_constant_rates_and_fails_at_zero_tolerance() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, CONSTANT);
    let base = [
        "validate",
        "--config",
        config.to_str().unwrap(),
        "--n-max",
        "6",
        "--m-max",
        "6",
        "--t-grid",
        "0.5:1:0.5",
    ];

    let out = run(&base);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_str(&out));
    let text = stdout_str(&out);
    assert!(text.starts_with("pair,max_abs_diff,tol,pass\n"));
    for pair in ["expr1-expr2", "expr1-master", "expr2-master", "expr2-km"] {
        let line = text
            .lines()
            .find(|l| l.starts_with(pair))
            .unwrap_or_else(|| panic!("missing pair {pair} in:\n{text}"));
        assert!(line.ends_with("true"), "pair should pass: {line}");
    }

    // A zero budget is unmeetable; the report still prints in full.
    let strict = run(&[&base[..], &["--tol", "0"]].concat());
    assert_eq!(strict.status.code(), Some(3));
    assert!(stdout_str(&strict).starts_with("pair,max_abs_diff,tol,pass\n"));
    assert!(stderr_str(&strict).contains("validation failed"));
}

#[test]
fn matrix_row_sums_to_one() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, CONSTANT);
    let out = run(&[
        "matrix",
        "--config",
        config.to_str().unwrap(),
        "--n",
        "0",
        "--t",
        "2",
        "--m-max",
        "30",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_str(&out));
    let text = stdout_str(&out);
    assert!(text.starts_with("m,probability\n"));
    assert!(text.contains("# total_mass = "));

    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 31);
    let mass: f64 = rows.iter().map(|r| r[1].parse::<f64>().unwrap()).sum();
    assert!((mass - 1.0).abs() <= 1e-8, "row mass {mass}");
}

#[test]
fn gfuncs_trace_matches_the_homogeneous_closed_form() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, CONSTANT);
    let out = run(&[
        "gfuncs",
        "--config",
        config.to_str().unwrap(),
        "--t-grid",
        "0:2:0.5",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_str(&out));
    let text = stdout_str(&out);
    assert!(text.starts_with("t,g1,g2,g3,g4,p,nu,alpha\n"));

    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 5);
    // No spectral parameter exists at t = 0; the trace keeps going.
    assert_eq!(rows[0][7], "nan");
    for row in &rows {
        let t: f64 = row[0].parse().unwrap();
        let g1: f64 = row[1].parse().unwrap();
        let g2: f64 = row[2].parse().unwrap();
        let g4: f64 = row[4].parse().unwrap();
        // Constant mu = 0.5 integrates exactly, and 17 digits round-trip.
        assert_eq!(g4, -(0.5 * t), "g4 at t = {t}");
        assert_eq!(g1, -g2, "g1 + g2 must vanish at t = {t}");
        if t > 0.0 {
            let alpha: f64 = row[7].parse().unwrap();
            assert!((alpha - 2.0).abs() <= 1e-12, "alpha at t = {t}: {alpha}");
        }
    }
}

#[test]
fn charlier_table_is_dual_symmetric() {
    let out = run(&[
        "charlier",
        "--alpha",
        "2",
        "--n-max",
        "6",
        "--x-max",
        "6",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_str(&out));
    let text = stdout_str(&out);
    assert!(text.starts_with("n,x,value\n"));

    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 49);
    let mut table = [[0.0f64; 7]; 7];
    for row in &rows {
        let n: usize = row[0].parse().unwrap();
        let x: usize = row[1].parse().unwrap();
        table[n][x] = row[2].parse().unwrap();
    }
    for (x, &v) in table[0].iter().enumerate() {
        assert_eq!(v, 1.0, "degree zero is identically 1 (x = {x})");
    }
    for (n, row) in table.iter().enumerate() {
        for (x, &a) in row.iter().enumerate() {
            let b = table[x][n];
            assert!(
                (a - b).abs() <= 1e-9 * a.abs().max(1.0),
                "duality defect at ({n}, {x}): {a} vs {b}"
            );
        }
    }
}

#[test]
fn simulation_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, CONSTANT);
    let args = [
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--n0",
        "3",
        "--t",
        "1",
        "--n-traj",
        "20000",
        "--seed",
        "7",
    ];
    let first = run(&args);
    let second = run(&args);
    assert_eq!(first.status.code(), Some(0), "stderr: {}", stderr_str(&first));
    assert_eq!(first.stdout, second.stdout, "same seed must replay exactly");

    let text = stdout_str(&first);
    assert!(text.starts_with("state,prob,stderr\n"));
    assert!(text.contains("# leaked_mass = "));
    let mass: f64 = csv_rows(&text)
        .iter()
        .map(|r| r[1].parse::<f64>().unwrap())
        .sum();
    assert!((mass - 1.0).abs() <= 1e-9, "empirical mass {mass}");
}

#[test]
fn oracle_reports_the_distribution_with_its_leak() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, CONSTANT);
    let out = run(&[
        "oracle",
        "--config",
        config.to_str().unwrap(),
        "--n0",
        "0",
        "--t",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_str(&out));
    let text = stdout_str(&out);
    assert!(text.starts_with("state,prob\n"));
    assert!(text.contains("# leaked_mass = "));
    let mass: f64 = csv_rows(&text)
        .iter()
        .map(|r| r[1].parse::<f64>().unwrap())
        .sum();
    assert!((mass - 1.0).abs() <= 1e-9, "tracked mass {mass}");
}

#[test]
fn env_tolerance_is_read_and_overridden_by_the_flag() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, CONSTANT);
    let args = [
        "transition",
        "--config",
        config.to_str().unwrap(),
        "--n",
        "2",
        "--m",
        "3",
        "--t",
        "1",
    ];

    let bad = run_with_env(&args, "BD_DEFAULT_TOL", "zebra");
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr_str(&bad).contains("BD_DEFAULT_TOL"));

    // An explicit flag wins; the broken variable is never consulted.
    let flagged = run_with_env(
        &[&args[..], &["--tol", "1e-10"]].concat(),
        "BD_DEFAULT_TOL",
        "zebra",
    );
    assert_eq!(
        flagged.status.code(),
        Some(0),
        "stderr: {}",
        stderr_str(&flagged)
    );
}

#[test]
fn out_file_matches_stdout_exactly() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, CONSTANT);
    let out_path = dir.path().join("row.csv");
    let base = [
        "matrix",
        "--config",
        config.to_str().unwrap(),
        "--n",
        "2",
        "--t",
        "1.5",
        "--m-max",
        "12",
    ];

    let redirected = run(&[&base[..], &["--out", out_path.to_str().unwrap()]].concat());
    assert_eq!(redirected.status.code(), Some(0));
    assert!(redirected.stdout.is_empty());

    let direct = run(&base);
    assert_eq!(std::fs::read(&out_path).unwrap(), direct.stdout);
}
