use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn gaussent(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaussent"))
        .args(args)
        .current_dir(dir)
        .env_remove("GAUSSENT_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

fn write_json(dir: &Path, name: &str, value: &Value) -> String {
    let path = dir.join(name);
    fs::write(&path, value.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn state_file(cov_diag: f64, off: [f64; 2]) -> Value {
    let (c, s) = (off[0], off[1]);
    json!({
        "n_modes": 2,
        "means": [0, 0, 0, 0],
        "cov": [[cov_diag, 0, c, 0], [0, cov_diag, 0, s], [c, 0, cov_diag, 0], [0, s, 0, cov_diag]],
    })
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn analyze_exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();

    let out = gaussent(&["analyze", golden("vacuum_state.json").to_str().unwrap()], d);
    assert_eq!(code(&out), 0);
    assert_eq!(out.stdout, fs::read(golden("analyze_vacuum.json")).unwrap());
    assert_eq!(stdout_json(&out)["margin"], 0.0);

    let (ch, sh) = (1f64.cosh() / 2.0, 1f64.sinh() / 2.0);
    let tmsv = write_json(d, "tmsv.json", &state_file(ch, [sh, -sh]));
    let out = gaussent(&["analyze", &tmsv], d);
    assert_eq!(code(&out), 1);
    assert_eq!(stdout_json(&out)["verdict"], "Entangled");

    let bad = write_json(d, "bad.json", &state_file(0.1, [0.0, 0.0]));
    let out = gaussent(&["analyze", &bad], d);
    assert_eq!(code(&out), 2);
    assert_eq!(stdout_json(&out)["valid"], false);

    fs::write(d.join("trunc.json"), "{\"n_modes\": 2, \"cov\": [[0.5").unwrap();
    assert_eq!(code(&gaussent(&["analyze", "trunc.json"], d)), 3);
    assert_eq!(code(&gaussent(&["analyze", "missing.json"], d)), 3);
    let extra = write_json(d, "extra.json", &json!({"n_modes": 1, "means": [0, 0], "cov": [[0.5, 0], [0, 0.5]], "note": 1}));
    assert_eq!(code(&gaussent(&["analyze", &extra], d)), 3);
    let one = write_json(d, "one.json", &json!({"n_modes": 1, "means": [0, 0], "cov": [[0.5, 0], [0, 0.5]]}));
    let out = gaussent(&["analyze", &one], d);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("2 modes"));
}

fn strip_wall_time(mut record: Value) -> Value {
    record.as_object_mut().unwrap().remove("wall_time_s");
    record
}

#[test]
fn simulate_locc_on_tmsv() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let config = write_json(d, "c.json", &json!({"state": {"kind": "tmsv", "r": 0.5}, "scheme": "locc_i", "shots": 100000, "seed": 7}));
    let out = gaussent(&["simulate", "--config", &config], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let record = stdout_json(&out);
    assert_eq!(record["estimated"]["verdict"], "Entangled");
    assert_eq!(record["truth"]["verdict"], "Entangled");
    assert_eq!(record["version"], env!("CARGO_PKG_VERSION"));
    assert!(record["rms_gamma_error"].as_f64().unwrap() < 0.02);

    let saved: Value = serde_json::from_str(&fs::read_to_string(d.join("runs/locc_i_7.json")).unwrap()).unwrap();
    assert_eq!(saved, record);
    let summary = fs::read_to_string(d.join("runs/summary.csv")).unwrap();
    let golden_header = fs::read_to_string(golden("summary_header.csv")).unwrap();
    assert!(summary.starts_with(&golden_header));
    assert_eq!(summary.lines().count(), 2);

    // a rerun appends one row and reproduces everything but the wall time
    let again = stdout_json(&gaussent(&["simulate", "--config", &config], d));
    assert_eq!(strip_wall_time(again), strip_wall_time(record.clone()));
    assert_eq!(fs::read_to_string(d.join("runs/summary.csv")).unwrap().lines().count(), 3);

    let other = stdout_json(&gaussent(&["simulate", "--config", &config, "--seed", "8"], d));
    assert_eq!(other["config"]["seed"], 8);
    assert_ne!(other["estimated"], record["estimated"]);
    assert!(d.join("runs/locc_i_8.json").exists());
}

#[test]
fn simulate_stokes_on_vacuum_sits_at_the_boundary() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let out_dir = d.join("elsewhere");
    let config = write_json(d, "c.json", &json!({"state": {"kind": "vacuum"}, "scheme": "stokes", "shots": 100000, "seed": 1, "output": {"name": "vac"}}));
    let out = Command::new(env!("CARGO_BIN_EXE_gaussent"))
        .args(["simulate", "--config", &config])
        .current_dir(d)
        .env("GAUSSENT_OUTPUT_DIR", &out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let record = stdout_json(&out);
    assert_eq!(record["truth"]["verdict"], "Boundary");
    let margin = record["estimated"]["margin"].as_f64().unwrap();
    let err = record["margin_std_error"].as_f64().unwrap();
    assert!(margin.abs() < 5.0 * err, "{margin} ± {err}");
    assert!(out_dir.join("vac.json").exists());
}

#[test]
fn simulate_every_scheme_runs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    for scheme in ["locc_ii", "twocopy_m1", "twocopy_m2", "twocopy_m3", "analytic"] {
        let config = write_json(
            d,
            "c.json",
            &json!({"state": {"kind": "simon", "lambda": 0.8, "mu": 0.6, "s": 0.3, "t": -0.1}, "scheme": scheme, "shots": 20000}),
        );
        let out = gaussent(&["simulate", "--config", &config], d);
        assert_eq!(code(&out), 0, "{scheme}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(stdout_json(&out)["config"]["scheme"], scheme);
    }
}

#[test]
fn simulate_errors() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let unknown = write_json(d, "u.json", &json!({"state": {"kind": "vacuum"}, "scheme": "stokes", "shotz": 10}));
    assert_eq!(code(&gaussent(&["simulate", "--config", &unknown], d)), 3);
    let unphysical = write_json(d, "p.json", &json!({"state": {"kind": "simon", "lambda": 0.5, "mu": 0.5, "s": 0.4, "t": 0.4}, "scheme": "analytic"}));
    assert_eq!(code(&gaussent(&["simulate", "--config", &unphysical], d)), 3);
    let same_refs = json!({"n_bar": 0.0, "d": 1.0, "beta": 0.0, "theta": 0.2, "gamma": 0.0});
    let singular = write_json(
        d,
        "s.json",
        &json!({"state": {"kind": "tmsv", "r": 0.5}, "scheme": "stokes", "shots": 2000,
                "stokes": {"reference_c": same_refs, "reference_d": same_refs}}),
    );
    let out = gaussent(&["simulate", "--config", &singular], d);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("ill-conditioned"));
}

fn read_csv(bytes: &[u8]) -> Vec<csv::StringRecord> {
    csv::Reader::from_reader(bytes).records().map(Result::unwrap).collect()
}

#[test]
fn sweep_empty_values_gives_header_only() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let config = write_json(d, "c.json", &json!({"state": {"kind": "tmsv", "r": 0.5}, "scheme": "locc_i"}));
    let out = gaussent(&["sweep", "--config", &config, "--axis", "shots", "--values", ""], d);
    assert_eq!(code(&out), 0);
    assert_eq!(out.stdout, fs::read(golden("sweep_empty.csv")).unwrap());
}

#[test]
fn sweep_squeeze_crosses_the_boundary_at_zero() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let config = write_json(d, "c.json", &json!({"state": {"kind": "tmsv", "r": 0.5}, "scheme": "analytic"}));
    let out = gaussent(&["sweep", "--config", &config, "--axis", "squeeze", "--values", "0,0.25,0.5"], d);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.starts_with(&fs::read(golden("sweep_empty.csv")).unwrap()));
    let rows = read_csv(&out.stdout);
    assert_eq!(rows.len(), 3);
    for (row, r) in rows.iter().zip([0.0f64, 0.25, 0.5]) {
        let exact: f64 = row[4].parse().unwrap();
        // D - 4 detΓ = cosh(4r)/2 - 1/4 for a TMSV
        assert!((exact - ((4.0 * r).cosh() / 2.0 - 0.5)).abs() < 1e-9, "r = {r}: {exact}");
    }
    assert_eq!(&rows[0][5], "Boundary");
    assert_eq!(&rows[1][5], "Entangled");
}

#[test]
fn sweep_shots_error_scaling() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let config = write_json(d, "c.json", &json!({"state": {"kind": "tmsv", "r": 0.5}, "scheme": "locc_i", "seed": 3}));
    let out = gaussent(&["sweep", "--config", &config, "--axis", "shots", "--values", "1000,10000,100000", "--repeats", "10"], d);
    assert_eq!(code(&out), 0);
    let rows = read_csv(&out.stdout);
    let points: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r[1].parse::<f64>().unwrap().ln(), r[7].parse::<f64>().unwrap().ln()))
        .collect();
    let slope = (points[2].1 - points[0].1) / (points[2].0 - points[0].0);
    assert!((slope + 0.5).abs() < 0.1, "slope {slope}");
    // reproducible
    let again = gaussent(&["sweep", "--config", &config, "--axis", "shots", "--values", "1000,10000,100000", "--repeats", "10"], d);
    assert_eq!(again.stdout, out.stdout);
}

#[test]
fn sweep_records_row_errors() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let config = write_json(d, "c.json", &json!({"state": {"kind": "vacuum"}, "scheme": "locc_i"}));
    let out = gaussent(&["sweep", "--config", &config, "--axis", "shots", "--values", "50,2000"], d);
    assert_eq!(code(&out), 0);
    let rows = read_csv(&out.stdout);
    assert!(rows[0][9].contains("insufficient shots"), "{:?}", rows[0]);
    assert_eq!(&rows[1][9], "");
    assert_eq!(code(&gaussent(&["sweep", "--config", &config, "--axis", "shots", "--values", "1,x"], d)), 3);
}

#[test]
fn randtest_analytic_and_empty() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let out = stdout_json(&gaussent(&["randtest", "--n", "50", "--scheme", "analytic", "--seed", "4"], d));
    assert_eq!(out["agreement"], 50);
    assert_eq!(out["agreement_rate"], 1.0);
    let empty = stdout_json(&gaussent(&["randtest", "--n", "0", "--scheme", "stokes"], d));
    assert_eq!(
        empty["confusion"],
        json!({"separable_as_separable": 0, "separable_as_entangled": 0, "entangled_as_separable": 0, "entangled_as_entangled": 0})
    );
    assert_eq!(empty["agreement_rate"], Value::Null);
}

#[test]
fn randtest_twocopy_method3() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let args = ["randtest", "--n", "200", "--scheme", "twocopy_m3", "--shots", "100000", "--seed", "1"];
    let out = gaussent(&args, d);
    assert_eq!(code(&out), 0);
    let report = stdout_json(&out);
    assert_eq!(report["failures"], json!([]));
    assert!(report["agreement_rate"].as_f64().unwrap() >= 0.99, "{report}");
    assert_eq!(report["all_disagreements_near_boundary"], true, "{report}");
}
