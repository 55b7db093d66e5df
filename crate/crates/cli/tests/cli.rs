use std::path::Path;
use std::process::{Command, Output};

fn vacuumlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vacuumlab")).args(args).output().unwrap()
}

fn write_config(path: &Path, dir: &Path, amplitude: f64) {
    let text = format!(
        r#"{{
  "schema": "vacuumlab.run/1",
  "params": {{"n": 3, "lambda": 0, "gamma": 2, "M": 1}},
  "solver": {{"resolution": 24, "t_end": 1e4, "rtol": 1e-8, "atol": 1e-14,
             "seed": {{"shape": "smooth_bump", "amplitude": {amplitude}}},
             "energy_nodes": 8, "outputs_per_decade": 30}},
  "ode": {{"t_end": 1e4, "rtol": 1e-10, "atol": 1e-24}},
  "outputs": {{"directory": {dir:?}, "checkpoint_every": 50}},
  "rng_seed": 7
}}"#
    );
    std::fs::write(path, text).unwrap();
}

#[test]
fn evolve_then_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    let dir = tmp.path().join("anchor");
    write_config(&cfg, &dir, 0.0);
    let out = vacuumlab(&["evolve", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    for f in [
        "config.json",
        "correction.csv",
        "states/0050.json",
        "reconstruction.csv",
        "energies.csv",
        "rates.json",
        "boundedness.json",
        "suite.json",
    ] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let fit = vacuumlab(&["fit", "--out", dir.to_str().unwrap()]);
    assert!(fit.status.success());
    assert!(String::from_utf8_lossy(&fit.stdout).contains("velocity"));
}

#[test]
fn perturbed_run_writes_energy_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    let dir = tmp.path().join("bump");
    write_config(&cfg, &tmp.path().join("ignored"), 1e-3);
    let out = vacuumlab(&[
        "evolve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        "11",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    for f in ["energies.csv", "rates.json", "boundedness.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let echoed = std::fs::read_to_string(dir.join("config.json")).unwrap();
    assert!(echoed.contains("\"rng_seed\": 11"));
    assert!(!tmp.path().join("ignored").exists());
}

#[test]
fn malformed_config_fails_without_a_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    let dir = tmp.path().join("never");
    std::fs::write(&cfg, "{\"schema\": \"vacuumlab.run/1\",\n \"params\": {\"n\": 3,}}").unwrap();
    let out = vacuumlab(&["evolve", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert!(!dir.exists());

    write_config(&cfg, &dir, -1.0);
    let out = vacuumlab(&["evolve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solver.seed.amplitude"));
    assert!(!dir.exists());
}

#[test]
fn verify_filters_and_reports_faults() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("suite.json");
    let out = vacuumlab(&["verify", "--only", "ode", "--out", report.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("ode.h_exponent_lambda0.3"));
    assert!(!text.contains("\"group\": \"pme\""));

    let out = vacuumlab(&["verify", "--only", "oracle", "--fault", "pressure-sign"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL oracle.radial_pressure_n2"));
}

#[test]
fn sweep_covers_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sweep.json");
    let dir = tmp.path().join("sweep");
    let text = format!(
        r#"{{
  "schema": "vacuumlab.run/1",
  "params": {{"n": 3, "lambda": 0, "gamma": 2, "M": 1}},
  "solver": {{"resolution": 16, "t_end": 1e4, "rtol": 1e-8, "atol": 1e-14,
             "seed": {{"shape": "bump", "amplitude": 0}}, "energy_nodes": 0, "outputs_per_decade": 25}},
  "outputs": {{"directory": {dir:?}, "checkpoint_every": 0}},
  "sweep": {{"lambda": [0, 0.3, 0.7], "gamma": [1.5, 2], "epsilon": [0, 1e-3]}}
}}"#
    );
    std::fs::write(&cfg, text).unwrap();
    let out = vacuumlab(&["sweep", "--config", cfg.to_str().unwrap()]);
    let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 12, "{}", String::from_utf8_lossy(&out.stdout));
    // ε = 0 cells must preserve the self-similar solution
    for row in rows.iter().filter(|r| r.split(',').nth(3) == Some("0.0")) {
        assert!(row.contains(",pass,"), "{row}");
    }
    // every completed row carries its fitted exponents
    for row in &rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert!(cols[6..9].iter().all(|c| !c.is_empty()), "{row}");
    }
}
