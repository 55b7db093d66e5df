//! Run directories: one configured run, parameter sweeps, and re-fitting
//! diagnostics from files already on disk.
//!
//! A run directory holds
//!
//! ```text
//! config.json          the validated configuration, echoed
//! correction.csv       the correction path t, h, h_t, θ, θ_t
//! states/NNNN.json     radial checkpoints (restartable)
//! reconstruction.csv   sup|w|, boundary radius, mass and the three gaps
//! energies.csv         energy components per output (if enabled)
//! rates.json           fitted gap exponents
//! boundedness.json     sup E(t)/E(0) per component (if enabled)
//! suite.json           the run assertions and their verdicts
//! ```

use crate::config::RunConfig;
use crate::diagnostics::{boundedness_report, gap_rate_report, BoundednessReport, RateReport};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::ode::{solve_correction, CorrectionPath};
use crate::radial::{evolve, output_times, EvolveOptions, Failure, OutputRecord, RadialDisc, RadialState, Trajectory};
use crate::suite::Check;
use crate::weighted::EnergyReport;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

pub const CONFIG_FILE: &str = "config.json";
pub const CORRECTION_FILE: &str = "correction.csv";
pub const RECONSTRUCTION_FILE: &str = "reconstruction.csv";
pub const ENERGIES_FILE: &str = "energies.csv";
pub const RATES_FILE: &str = "rates.json";
pub const BOUNDEDNESS_FILE: &str = "boundedness.json";
pub const SUITE_FILE: &str = "suite.json";
pub const STATES_DIR: &str = "states";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub directory: PathBuf,
    pub rng_seed: u64,
    pub checks: Vec<Check>,
    pub failure: Option<Failure>,
    pub pass: bool,
}

/// Verdicts on the diagnostics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnosis {
    pub rates: Option<RateReport>,
    pub boundedness: Option<BoundednessReport>,
    pub checks: Vec<Check>,
}

fn assertion(name: &str, pass: bool, value: f64, criterion: impl Into<String>) -> Check {
    Check {
        group: "run".into(),
        name: name.into(),
        pass,
        value,
        criterion: criterion.into(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Rate fits and energy ratios with the assertions they imply. Fit errors
/// (too short a run, say) become failing assertions.
pub fn diagnose(cfg: &RunConfig, path: &CorrectionPath, records: &[OutputRecord], energies: Option<&EnergyReport>) -> Diagnosis {
    let acc = &cfg.acceptance;
    let anchor = cfg.solver.seed.amplitude == 0.0;
    let mut checks = Vec::new();
    if anchor {
        let sup = records.iter().map(|r| r.sup_w).fold(0.0, f64::max);
        checks.push(assertion(
            "preservation",
            sup <= acc.preservation,
            sup,
            format!("sup |w| ≤ {:e}", acc.preservation),
        ));
    }
    let rates = match gap_rate_report(records, path, acc.slack) {
        Ok(r) => {
            if let (Some(id), Some(ok)) = (r.identity, r.identity_pass) {
                checks.push(assertion(
                    "closed_forms",
                    ok,
                    id.iter().cloned().fold(0.0, f64::max),
                    "gaps equal their closed forms",
                ));
            }
            for f in &r.fits {
                let rel = if f.exact_match { "±" } else { "≤ +" };
                checks.push(assertion(
                    &format!("{}_rate", f.gap.name().replace(' ', "_")),
                    f.pass,
                    f.fit.exponent,
                    format!("{:.3} {rel}{}", f.expected, f.tolerance),
                ));
            }
            Some(r)
        }
        Err(e) => {
            checks.push(assertion("rates", false, f64::NAN, format!("error: {e}")));
            None
        }
    };
    let boundedness = match energies.map(|e| boundedness_report(e, acc.ratio_threshold)) {
        Some(Ok(b)) => {
            // an unperturbed run has no energy to bound
            if b.applicable {
                checks.push(assertion(
                    "energy_boundedness",
                    b.pass,
                    b.total.ratio.unwrap_or(f64::NAN),
                    format!("sup E/E(0) ≤ {} for every component", acc.ratio_threshold),
                ));
            }
            Some(b)
        }
        Some(Err(e)) => {
            checks.push(assertion("energy_boundedness", false, f64::NAN, format!("error: {e}")));
            None
        }
        None => None,
    };
    Diagnosis {
        rates,
        boundedness,
        checks,
    }
}

fn write_diagnosis(dir: &Path, d: &Diagnosis) -> Result<()> {
    if let Some(r) = &d.rates {
        write_json(&dir.join(RATES_FILE), r)?;
    }
    if let Some(b) = &d.boundedness {
        write_json(&dir.join(BOUNDEDNESS_FILE), b)?;
    }
    Ok(())
}

pub fn write_records(path: &Path, records: &[OutputRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<OutputRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Solve, evolve and diagnose one configuration. The configuration is
/// validated before anything is written. Solver failures keep every
/// artifact produced so far and fail the run.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    run_with(cfg, Execution::available())
}

pub fn run_with(cfg: &RunConfig, execution: Execution) -> Result<RunReport> {
    cfg.validate()?;
    let params = cfg.physical()?;
    let dir = cfg.outputs.directory.clone();
    fs::create_dir_all(dir.join(STATES_DIR))?;
    write_json(&dir.join(CONFIG_FILE), cfg)?;

    let path = solve_correction(&params, cfg.ode.t_end, cfg.ode.rtol, cfg.ode.atol)?;
    path.write_csv(BufWriter::new(File::create(dir.join(CORRECTION_FILE))?))?;

    let s = &cfg.solver;
    let disc = RadialDisc::with_execution(&params, s.resolution, execution)?;
    let initial = RadialState::from_profile(&disc, s.seed.shape.profile(params.r0, s.seed.amplitude));
    let mut opts = EvolveOptions::new(output_times(s.t_end, s.outputs_per_decade));
    opts.rtol = s.rtol;
    opts.atol = s.atol;
    opts.energy_nodes = (s.energy_nodes > 0).then_some(s.energy_nodes);
    opts.checkpoint_every = cfg.outputs.checkpoint_every;
    let traj = evolve(&disc, &path, initial, &opts)?;
    write_trajectory(&dir, &traj)?;

    let d = diagnose(cfg, &path, &traj.records, traj.energies.as_ref());
    write_diagnosis(&dir, &d)?;
    let mut checks = vec![assertion(
        "completed",
        traj.completed(),
        traj.records.last().map_or(0.0, |r| r.t),
        format!("reached t = {:e}", s.t_end),
    )];
    checks.extend(d.checks);
    let report = RunReport {
        directory: dir.clone(),
        rng_seed: cfg.rng_seed,
        pass: checks.iter().all(|c| c.pass),
        checks,
        failure: traj.failure,
    };
    write_json(&dir.join(SUITE_FILE), &report)?;
    Ok(report)
}

fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<()> {
    write_records(&dir.join(RECONSTRUCTION_FILE), &traj.records)?;
    if let Some(e) = &traj.energies {
        e.write_csv(BufWriter::new(File::create(dir.join(ENERGIES_FILE))?))?;
    }
    for cp in &traj.checkpoints {
        write_json(&dir.join(STATES_DIR).join(format!("{:04}.json", cp.index)), cp)?;
    }
    Ok(())
}

/// Recompute rates and energy ratios from an existing run directory and
/// rewrite its reports. The correction path is re-solved from the echoed
/// configuration, since the derivative `h_tt` is not stored.
pub fn fit(dir: &Path) -> Result<Diagnosis> {
    let mut cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
    cfg.outputs.directory = dir.to_path_buf();
    let params = cfg.physical()?;
    let path = solve_correction(&params, cfg.ode.t_end, cfg.ode.rtol, cfg.ode.atol)?;
    let records = read_records(&dir.join(RECONSTRUCTION_FILE))?;
    let energy_file = dir.join(ENERGIES_FILE);
    let energies = if energy_file.exists() {
        Some(EnergyReport::read_csv(File::open(energy_file)?)?)
    } else {
        None
    };
    let d = diagnose(&cfg, &path, &records, energies.as_ref());
    write_diagnosis(dir, &d)?;
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// `pass`, `fail` or `error`.
    pub status: String,
    pub sup_w: Option<f64>,
    pub position_exponent: Option<f64>,
    pub density_exponent: Option<f64>,
    pub velocity_exponent: Option<f64>,
    pub energy_ratio: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub pass: bool,
}

/// The cells of a sweep, in `λ`-major order; an empty axis keeps the base value.
pub fn sweep_cells(cfg: &RunConfig) -> Vec<(f64, f64, f64)> {
    let sw = cfg.sweep.clone().unwrap_or_default();
    let or_base = |v: &Vec<f64>, base: f64| if v.is_empty() { vec![base] } else { v.clone() };
    let lambdas = or_base(&sw.lambda, cfg.params.lambda);
    let gammas = or_base(&sw.gamma, cfg.params.gamma);
    let eps = or_base(&sw.epsilon, cfg.solver.seed.amplitude);
    let mut cells = Vec::new();
    for &l in &lambdas {
        for &g in &gammas {
            for &e in &eps {
                cells.push((l, g, e));
            }
        }
    }
    cells
}

fn sweep_row(cell: usize, (lambda, gamma, epsilon): (f64, f64, f64), outcome: Result<RunReport>, dir: &Path) -> SweepRow {
    let mut row = SweepRow {
        cell,
        lambda,
        gamma,
        epsilon,
        status: "error".into(),
        sup_w: None,
        position_exponent: None,
        density_exponent: None,
        velocity_exponent: None,
        energy_ratio: None,
        message: String::new(),
    };
    let report = match outcome {
        Ok(r) => r,
        Err(e) => {
            row.message = e.to_string();
            return row;
        }
    };
    row.status = if report.pass { "pass" } else { "fail" }.into();
    row.message = report.failure.map(|f| f.message).unwrap_or_else(|| {
        report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.clone())
            .collect::<Vec<_>>()
            .join(" ")
    });
    if let Ok(records) = read_records(&dir.join(RECONSTRUCTION_FILE)) {
        row.sup_w = Some(records.iter().map(|r| r.sup_w).fold(0.0, f64::max));
    }
    let rates: Option<RateReport> = fs::read_to_string(dir.join(RATES_FILE))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    if let Some(r) = rates {
        let slots = [&mut row.position_exponent, &mut row.density_exponent, &mut row.velocity_exponent];
        for (slot, f) in slots.into_iter().zip(&r.fits) {
            *slot = Some(f.fit.exponent);
        }
    }
    let bounded: Option<BoundednessReport> = fs::read_to_string(dir.join(BOUNDEDNESS_FILE))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    row.energy_ratio = bounded.and_then(|b| b.total.ratio);
    row
}

/// Run every cell of the sweep grid in its own subdirectory, in parallel.
/// A failing or erroring cell is recorded and never stops the others.
pub fn sweep(cfg: &RunConfig) -> Result<SweepSummary> {
    cfg.validate()?;
    let root = cfg.outputs.directory.clone();
    let cells = sweep_cells(cfg);
    fs::create_dir_all(&root)?;
    let indexed: Vec<(usize, (f64, f64, f64))> = cells.into_iter().enumerate().collect();
    let rows = exec::map(Execution::available(), &indexed, |&(i, cell)| {
        let dir = root.join(format!("cell_{i:03}"));
        let mut c = cfg.clone();
        c.sweep = None;
        c.params.lambda = cell.0;
        c.params.gamma = cell.1;
        c.solver.seed.amplitude = cell.2;
        c.outputs.directory = dir.clone();
        // cells already run in parallel; keep each run's inner loops serial
        let outcome = run_with(&c, Execution::Sequential);
        sweep_row(i, cell, outcome, &dir)
    });
    let summary = SweepSummary {
        pass: rows.iter().all(|r| r.status == "pass"),
        rows,
    };
    let mut w = csv::Writer::from_path(root.join("summary.csv"))?;
    for r in &summary.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    write_json(&root.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Read a JSON report written by this module.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(Error::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial::Checkpoint;

    fn small(dir: &Path, eps: f64) -> RunConfig {
        let mut cfg = RunConfig::anchor(dir);
        cfg.solver.resolution = 24;
        cfg.solver.t_end = 1e3;
        cfg.solver.outputs_per_decade = 30;
        cfg.solver.energy_nodes = 8;
        cfg.ode.t_end = 1e3;
        cfg.outputs.checkpoint_every = 40;
        cfg.solver.seed.amplitude = eps;
        cfg
    }

    #[test]
    fn anchor_run_writes_every_file_and_passes() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let mut cfg = small(&dir, 0.0);
        cfg.solver.t_end = 1e4;
        cfg.ode.t_end = 1e4;
        let report = run(&cfg).unwrap();
        assert!(report.pass, "{report:#?}");
        for f in [
            CONFIG_FILE,
            CORRECTION_FILE,
            RECONSTRUCTION_FILE,
            ENERGIES_FILE,
            RATES_FILE,
            BOUNDEDNESS_FILE,
            SUITE_FILE,
        ] {
            assert!(dir.join(f).exists(), "{f}");
        }
        let cp: Checkpoint = read_json(&dir.join(STATES_DIR).join("0040.json")).unwrap();
        assert_eq!(cp.index, 40);
        let again = fit(&dir).unwrap();
        assert!(again.checks.iter().all(|c| c.pass));
        let echoed = RunConfig::load(&dir.join(CONFIG_FILE)).unwrap();
        assert_eq!(echoed, cfg);
    }

    #[test]
    fn invalid_config_creates_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("never");
        let mut cfg = small(&dir, 0.0);
        cfg.solver.resolution = 4;
        assert!(matches!(run(&cfg), Err(Error::Config { .. })));
        assert!(!dir.exists());
    }

    #[test]
    fn runs_are_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        run(&small(&a, 1e-3)).unwrap();
        run(&small(&b, 1e-3)).unwrap();
        for f in [RECONSTRUCTION_FILE, ENERGIES_FILE, CORRECTION_FILE] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn sweep_records_failing_cells() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = small(&tmp.path().join("sweep"), 0.0);
        cfg.solver.energy_nodes = 0;
        cfg.solver.t_end = 10.0;
        cfg.solver.outputs_per_decade = 10;
        cfg.sweep = Some(crate::config::SweepBlock {
            lambda: vec![0.0, 0.3],
            gamma: vec![],
            epsilon: vec![0.0, 2.0],
        });
        let s = sweep(&cfg).unwrap();
        assert_eq!(s.rows.len(), 4);
        assert!(s.rows.iter().all(|r| r.sup_w.is_some() || r.status == "error"));
        // ε = 2 folds the map immediately
        assert!(s.rows.iter().filter(|r| r.epsilon == 2.0).all(|r| r.status != "pass"));
        assert!(tmp.path().join("sweep/summary.csv").exists());
    }
}
