//! Black-box tests of the command-line interface: exit codes, output
//! shapes, dispatch rules, manifests, and determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_expfun"))
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path
}

fn run(args: &[&std::ffi::OsStr]) -> Output {
    bin().args(args).output().unwrap()
}

fn args<'a>(parts: &'a [&'a str], config: &'a Path) -> Vec<&'a std::ffi::OsStr> {
    let mut v: Vec<&std::ffi::OsStr> = Vec::new();
    for p in parts {
        if *p == "{config}" {
            v.push(config.as_os_str());
        } else {
            v.push(std::ffi::OsStr::new(p));
        }
    }
    v
}

const PURE_BM: &str = r#"{
    "sigma_xi": 1.4142135623730951,
    "mu_xi": -1.0,
    "eta": {"mu": 0.0, "sigma": 1.0},
    "sampler": {"n_paths": 2500, "seed": 11}
}"#;

#[test]
fn validate_prints_exponents_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "m.json", PURE_BM);
    let out = run(&args(&["validate", "--config", "{config}"], &config));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("theta: 1.0000"), "report: {text}");
    assert!(text.contains("valid: true"));
}

#[test]
fn validate_rejects_positive_mean_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "m.json",
        r#"{"sigma_xi": 0.0, "mu_xi": 0.5, "eta": {"mu": 0.0, "sigma": 1.0}}"#,
    );
    let out = run(&args(&["validate", "--config", "{config}"], &config));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("E[xi_1] >= 0"), "stderr: {err}");
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "m.json", "{not json");
    let out = run(&args(&["validate", "--config", "{config}"], &config));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("nope.json");
    let out = run(&args(&["validate", "--config", "{config}"], &config));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "m.json",
        r#"{"sigma_xi": 1.0, "mu_xi": -1.0, "eta": {"mu": 0, "sigma": 1}, "extra": 1}"#,
    );
    let out = run(&args(&["validate", "--config", "{config}"], &config));
    assert_eq!(out.status.code(), Some(2));
}

fn parse_csv(stdout: &[u8]) -> (String, Vec<Vec<String>>) {
    let text = String::from_utf8(stdout.to_vec()).unwrap();
    let mut lines = text.lines();
    let manifest = lines.next().unwrap().to_string();
    assert!(manifest.starts_with("# manifest: "), "first line: {manifest}");
    let header = lines.next().unwrap().to_string();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.to_string()).collect())
        .collect();
    (header, rows)
}

#[test]
fn density_grid_dispatch_and_symmetry() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "m.json", PURE_BM);
    let out = run(&args(
        &["density", "--config", "{config}", "--x", "-1,0,1"],
        &config,
    ));
    assert!(out.status.success());
    let (header, rows) = parse_csv(&out.stdout);
    assert_eq!(header, "x,value,method,error_estimate");
    assert_eq!(rows.len(), 3);
    // The x = 0 row must come from the series expansion.
    assert_eq!(rows[1][2], "series-small-x");
    // Symmetric integrator: the two sides agree within the error column.
    let v = |r: &Vec<String>, c: usize| r[c].parse::<f64>().unwrap();
    let (vm, vp) = (v(&rows[0], 1), v(&rows[2], 1));
    let err = v(&rows[0], 3) + v(&rows[2], 3);
    assert!((vm - vp).abs() <= err, "density(-1) = {vm}, density(1) = {vp}");
    assert!(vm > 0.0 && vp > 0.0);
}

#[test]
fn density_range_syntax_gives_evenly_spaced_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "m.json", PURE_BM);
    let out = run(&args(
        &["density", "--config", "{config}", "--x", "0.5:2.5:5"],
        &config,
    ));
    assert!(out.status.success());
    let (_, rows) = parse_csv(&out.stdout);
    let xs: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(xs, vec![0.5, 1.0, 1.5, 2.0, 2.5]);
}

#[test]
fn unknown_strategy_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "m.json", PURE_BM);
    let out = run(&args(
        &["density", "--config", "{config}", "--x", "1", "--strategy", "bogus"],
        &config,
    ));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn series_strategy_without_expansion_exits_one() {
    // An integer negative-jump rate collides the expansion's pole families,
    // so no series coefficients exist; requesting the series strategy at a
    // positive point must fail with a domain error, not fall back silently.
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "m.json",
        r#"{
            "sigma_xi": 1.4142135623730951,
            "mu_xi": -2.0,
            "neg_jumps": [{"a_hat": 1.0, "rho_hat": 1.0}],
            "eta": {"mu": 0.0, "sigma": 1.0},
            "sampler": {"n_paths": 2000, "seed": 3}
        }"#,
    );
    let out = run(&args(
        &["density", "--config", "{config}", "--x", "0.5", "--strategy", "series"],
        &config,
    ));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn expand_non_simple_poles_exits_one_with_assumption_citation() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "m.json",
        r#"{
            "sigma_xi": 1.4142135623730951,
            "mu_xi": -2.0,
            "neg_jumps": [{"a_hat": 1.0, "rho_hat": 1.0}],
            "eta": {"mu": 0.0, "sigma": 1.0},
            "sampler": {"n_paths": 2000, "seed": 3}
        }"#,
    );
    let out = run(&args(&["expand", "--config", "{config}"], &config));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(
        err.contains("simple-poles distinctness assumption"),
        "stderr: {err}"
    );
}

#[test]
fn expand_emits_coefficient_json() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "m.json", PURE_BM);
    let out_path = dir.path().join("coeffs.json");
    let out = bin()
        .args(["expand", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert!(doc["b_n"].as_array().unwrap().len() >= 2);
    assert_eq!(doc["zeta"].as_array().unwrap().len(), 1);
    assert!(doc["tail_constant"]["c"].as_str().unwrap().parse::<f64>().unwrap() > 0.0);
    // Sidecar manifest accompanies the file output.
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("coeffs.json.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["subcommand"], "expand");
    assert_eq!(manifest["seed"], 11);
    assert!(manifest["model_hash"].as_str().unwrap().len() == 16);
}

#[test]
fn mellin_flags_pole_rows_and_keeps_finite_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "m.json", PURE_BM);
    let out = run(&args(
        &["mellin", "--config", "{config}", "--s", "0,1,1.5"],
        &config,
    ));
    assert!(out.status.success());
    let (header, rows) = parse_csv(&out.stdout);
    assert_eq!(header, "re_s,im_s,value_re,value_im,stderr,status");
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][5], "pole");
    assert_eq!(rows[0][2], "NaN");
    assert_eq!(rows[1][5], "ok");
    assert_eq!(rows[2][5], "ok");
    // M(1) is total mass on the positive half-line: 1/2 for the symmetric
    // integrator, with zero variance.
    assert!((rows[1][2].parse::<f64>().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn mc_output_carries_manifest_and_columns() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "m.json", PURE_BM);
    let out_path = dir.path().join("draws.csv");
    let out = bin()
        .args(["mc", "--config"])
        .arg(&config)
        .args(["--n-paths", "40", "--out"])
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = std::fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# manifest: model="));
    assert_eq!(lines[1], "j1,j2,v,i_draw,truncation_tail");
    assert_eq!(lines.len(), 2 + 40);
    for row in &lines[2..] {
        let cols: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols.len(), 5);
        assert!(cols[0] > 0.0 && cols[1] > 0.0, "J1, J2 are positive");
        assert!(cols[4] >= 0.0, "truncation bound is non-negative");
    }
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("draws.csv.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["parameters"]["n_paths"], "40");
    // The manifest reference in the data file matches the sidecar.
    assert!(lines[0].contains(manifest["model_hash"].as_str().unwrap()));
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "m.json", PURE_BM);
    let base = run(&args(&["mc", "--config", "{config}", "--n-paths", "5"], &config));
    let reseeded = run(&args(
        &["mc", "--config", "{config}", "--n-paths", "5", "--seed", "77"],
        &config,
    ));
    assert!(base.status.success() && reseeded.status.success());
    let (m1, rows1) = parse_csv(&base.stdout);
    let (m2, rows2) = parse_csv(&reseeded.stdout);
    assert_eq!(m1, m2, "column header is seed-independent");
    assert_ne!(rows1, rows2, "different seeds must give different draws");
    let text = String::from_utf8(reseeded.stdout).unwrap();
    assert!(text.lines().next().unwrap().contains("seed=77"));
}

#[test]
fn stdout_carries_only_data_and_stderr_the_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "m.json", PURE_BM);
    let out = run(&args(
        &["density", "--config", "{config}", "--x", "1", "--out", "-"],
        &config,
    ));
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let stderr = String::from_utf8(out.stderr).unwrap();
    for line in stdout.lines() {
        assert!(
            line.starts_with("# manifest: ") || line.contains(','),
            "non-data line on stdout: {line}"
        );
    }
    assert!(stderr.contains("simulating"), "diagnostics go to stderr");
}

#[test]
fn check_ss1_passes_on_default_budget() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "m.json",
        r#"{
            "sigma_xi": 1.4142135623730951,
            "mu_xi": -1.0,
            "eta": {"mu": 0.0, "sigma": 1.0},
            "sampler": {"n_paths": 30000, "seed": 13}
        }"#,
    );
    let out_path = dir.path().join("residuals.csv");
    let out = bin()
        .args(["check-ss1", "--config"])
        .arg(&config)
        .args(["--x", "0.3:3:8", "--out"])
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# manifest: "));
    assert_eq!(lines[1], "v,residual,reference_scale");
    assert_eq!(lines.len(), 2 + 8);
}

#[test]
fn density_rerun_is_byte_identical_including_file_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "m.json", PURE_BM);
    let mut captured = Vec::new();
    for run_idx in 0..2 {
        let out_path = dir.path().join(format!("d{run_idx}.csv"));
        let out = bin()
            .args(["density", "--config"])
            .arg(&config)
            .args(["--x", "0:2:4", "--out"])
            .arg(&out_path)
            .output()
            .unwrap();
        assert!(out.status.success());
        captured.push((
            std::fs::read(&out_path).unwrap(),
            std::fs::read(dir.path().join(format!("d{run_idx}.csv.manifest.json"))).unwrap(),
        ));
    }
    assert_eq!(captured[0], captured[1]);
}
