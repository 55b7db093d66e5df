//! End-to-end acceptance: seven criteria, one PASS/FAIL line each.

use std::io::Write;
use std::time::{Duration, Instant};
use vacuumlab::config::RunConfig;
use vacuumlab::diagnostics::{gap_rate_report, ratio_spread, BoundednessReport};
use vacuumlab::harness::{self, read_json, read_records, BOUNDEDNESS_FILE};
use vacuumlab::ode::{fit_h_window, h_exponent, integrating_factor_series, solve_correction, DEFAULT_ATOL, DEFAULT_RTOL};
use vacuumlab::params::derive_constants;
use vacuumlab::radial::SeedShape;
use vacuumlab::suite::{self, Check};

struct Verdict {
    pass: bool,
    detail: String,
}

fn from_checks(checks: &[Check]) -> Verdict {
    let failing: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{} = {:.4e}", c.name, c.value))
        .collect();
    Verdict {
        pass: !checks.is_empty() && failing.is_empty(),
        detail: if failing.is_empty() {
            format!("{} checks", checks.len())
        } else {
            failing.join("; ")
        },
    }
}

/// Unperturbed run at 256 nodes to t = 1e4: preservation (1) and the
/// closed-form rates (3) come from the same trajectory.
fn anchor() -> (Verdict, Verdict) {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("anchor");
    let cfg = RunConfig::anchor(&dir);
    let started = Instant::now();
    let report = harness::run(&cfg).unwrap();
    let elapsed = started.elapsed();
    let records = read_records(&dir.join(harness::RECONSTRUCTION_FILE)).unwrap();
    let sup = records.iter().map(|r| r.sup_w).fold(0.0, f64::max);
    let reached = records.last().map_or(0.0, |r| r.t);
    let first = Verdict {
        pass: report.failure.is_none() && reached == 1e4 && sup <= 1e-8 && elapsed < Duration::from_secs(600),
        detail: format!("sup |w| = {sup:.3e} to t = {reached:e} in {:.1} s", elapsed.as_secs_f64()),
    };

    let params = cfg.physical().unwrap();
    let path = solve_correction(&params, cfg.ode.t_end, cfg.ode.rtol, cfg.ode.atol).unwrap();
    let rates = gap_rate_report(&records, &path, cfg.acceptance.slack).unwrap();
    let expected = [-0.8, -1.6, -1.8];
    let exps_ok = rates.fits.len() == 3
        && rates
            .fits
            .iter()
            .zip(expected)
            .all(|(f, e)| f.exact_match && f.fit.log_corrected && (f.fit.exponent - e).abs() <= 0.05);
    let id = rates.identity.unwrap_or([f64::NAN; 3]);
    let third = Verdict {
        pass: rates.anchor && rates.identity_pass == Some(true) && id.iter().all(|v| *v <= 1e-10) && exps_ok,
        detail: format!(
            "closed-form err {:.1e}; exponents {}",
            id.iter().cloned().fold(0.0, f64::max),
            rates
                .fits
                .iter()
                .map(|f| format!("{:.3}", f.fit.exponent))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    (first, third)
}

fn correction_ode() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for lambda in [0.0, 0.3, 0.7] {
        let p = derive_constants(3, lambda, 2.0, 1.0).unwrap();
        let path = solve_correction(&p, 1e6, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        let fit = fit_h_window(&path, [1e2, 1e6], lambda == 0.0).unwrap();
        let expected = h_exponent(&p);
        let signs = (0..path.len())
            .map(|k| path.sample(k))
            .filter(|j| j.t > 0.0)
            .all(|j| j.theta > 1.0 && j.theta_t > 0.0);
        pass &= (fit.exponent - expected).abs() <= 0.05 && signs;
        parts.push(format!("λ={lambda}: {:.4} vs {expected:.2}", fit.exponent));
    }
    Verdict {
        pass,
        detail: parts.join(", "),
    }
}

fn curl_envelope() -> Verdict {
    from_checks(&suite::curl_checks().unwrap())
}

fn energy(shape: SeedShape) -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let reports: Vec<BoundednessReport> = [1e-3, 5e-4]
        .iter()
        .map(|&eps| {
            let dir = tmp.path().join(format!("eps{eps}"));
            let mut cfg = RunConfig::anchor(&dir);
            cfg.solver.resolution = 128;
            cfg.solver.seed.shape = shape;
            cfg.solver.seed.amplitude = eps;
            cfg.outputs.checkpoint_every = 0;
            let run = harness::run(&cfg).unwrap();
            assert!(run.failure.is_none(), "{run:?}");
            read_json(&dir.join(BOUNDEDNESS_FILE)).unwrap()
        })
        .collect();
    let spread = ratio_spread(&reports[0], &reports[1]).unwrap_or(f64::INFINITY);
    let worst = reports[0].components.iter().filter_map(|c| c.ratio).fold(0.0, f64::max);
    Verdict {
        pass: reports.iter().all(|r| r.applicable && r.pass) && spread <= 0.2,
        detail: format!(
            "total ratio {:.4} / {:.4}, worst component {worst:.3}, spread {spread:.2e}",
            reports[0].total.ratio.unwrap_or(f64::NAN),
            reports[1].total.ratio.unwrap_or(f64::NAN)
        ),
    }
}

/// Kinematic residual orders, quadrature exactness, Hardy bounds and the
/// integrating-factor ratio. The latter is checked for the exponents at
/// which the decay estimates apply it (`k = m + λ − κ` and `2 − κ`), and
/// for stability under a tenfold horizon over a wider grid.
fn kinematics_and_calculus() -> Verdict {
    let mut checks = suite::kinematics_checks(25).unwrap();
    checks.extend(suite::quadrature_checks().unwrap());
    checks.extend(suite::hardy_checks(0).unwrap());
    checks.extend(suite::integrating_factor_checks().unwrap());
    for lambda in [0.0, 0.3, 0.7] {
        let kappa = derive_constants(3, lambda, 2.0, 1.0).unwrap().kappa;
        for k in [1.0 + lambda - kappa, 2.0 + lambda - kappa, 2.0 - kappa] {
            let r = integrating_factor_series(lambda, k, 1e3, 40).unwrap();
            checks.push(Check {
                group: "integrating_factor".into(),
                name: format!("integrating_factor.trend_lambda{lambda}_k{k:.2}"),
                pass: r.no_growth(),
                value: r.tail_slope,
                criterion: "no growth over the last decade".into(),
            });
        }
    }
    from_checks(&checks)
}

fn pme() -> Verdict {
    from_checks(&suite::pme_checks(&derive_constants(3, 0.0, 2.0, 1.0).unwrap()).unwrap())
}

#[test]
fn acceptance() {
    let ((c1, c3), c2, c4, c5, c6, c7) = std::thread::scope(|s| {
        let a = s.spawn(anchor);
        let b = s.spawn(correction_ode);
        let d = s.spawn(curl_envelope);
        let e = s.spawn(|| energy(SeedShape::Bump));
        let f = s.spawn(kinematics_and_calculus);
        let g = s.spawn(pme);
        (
            a.join().unwrap(),
            b.join().unwrap(),
            d.join().unwrap(),
            e.join().unwrap(),
            f.join().unwrap(),
            g.join().unwrap(),
        )
    });
    let rows = [
        ("1 exact-solution anchor", c1),
        ("2 correction ODE asymptotics", c2),
        ("3 closed-form gap rates", c3),
        ("4 curl envelope", c4),
        ("5 energy boundedness", c5),
        ("6 kinematics and weighted calculus", c6),
        ("7 self-similar profile", c7),
    ];
    // write past the test harness capture so the verdicts always show
    let mut out = std::io::stdout().lock();
    for (name, v) in &rows {
        writeln!(out, "{} criterion {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail).unwrap();
    }
    drop(out);
    let failed: Vec<&str> = rows.iter().filter(|(_, v)| !v.pass).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
