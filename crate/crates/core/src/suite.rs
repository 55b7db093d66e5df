//! The property suite: every self-check the crate can run without external
//! data, grouped so that subsets can be selected by name.

use crate::angular::{curl_decay_fit, curl_mode, evolve_mode, ModeDisc, ModeOptions};
use crate::diagnostics::gap_rate_report;
use crate::error::Result;
use crate::exec::{self, Execution};
use crate::kinematics::{build_deformation, check_identities, TensorGrid};
use crate::ode::{
    fit_h_window, h_exponent, integrating_factor_series, solve_correction, verify_theta_properties, DEFAULT_ATOL, DEFAULT_RTOL,
};
use crate::params::{derive_constants, mass_at, pme_residual, PhysParams};
use crate::quadrature::GaussJacobi;
use crate::radial::{evolve, oracle_with_sign, output_times, EvolveOptions, RadialDisc, RadialState};
use crate::weighted::{hardy_family, sigma_moment, weighted_norm, AngularRule, WeightedGrid};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

pub const GROUPS: [&str; 9] = [
    "quadrature",
    "kinematics",
    "hardy",
    "ode",
    "integrating_factor",
    "oracle",
    "zero_run",
    "curl_envelope",
    "pme",
];

/// Deliberate defects used to confirm that the suite detects them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Flip the sign of the Cartesian pressure in the oracle comparison.
    PressureSign,
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Run only this group.
    pub only: Option<String>,
    pub fault: Option<Fault>,
    /// Radial nodes for the unperturbed run.
    pub zero_run_nodes: usize,
    pub execution: Execution,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            only: None,
            fault: None,
            zero_run_nodes: 256,
            execution: Execution::available(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub group: String,
    pub name: String,
    pub pass: bool,
    /// The measured quantity the verdict rests on.
    pub value: f64,
    /// What `value` was compared against.
    pub criterion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub fault: Option<Fault>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl SuiteReport {
    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{:<4} {:<40} {:>12.4e}  {}\n",
                if c.pass { "ok" } else { "FAIL" },
                c.name,
                c.value,
                c.criterion
            ));
        }
        out.push_str(&format!(
            "{} of {} checks passed\n",
            self.checks.iter().filter(|c| c.pass).count(),
            self.checks.len()
        ));
        out
    }
}

fn check(group: &str, name: impl Into<String>, pass: bool, value: f64, criterion: impl Into<String>) -> Check {
    Check {
        group: group.into(),
        name: name.into(),
        pass,
        value,
        criterion: criterion.into(),
    }
}

fn failed(group: &str, name: &str, e: crate::Error) -> Vec<Check> {
    vec![check(group, name, false, f64::NAN, format!("error: {e}"))]
}

fn within(ratio: f64, nominal: f64, rel: f64) -> bool {
    (ratio - nominal).abs() <= rel * nominal
}

pub fn quadrature_checks() -> Result<Vec<Check>> {
    let mut worst: f64 = 0.0;
    for &(a, b) in &[(0.0, 0.0), (0.5, 1.5), (1.0, 0.5), (2.0, 0.0), (-0.5, 1.0), (1.0 / 3.0, 2.0)] {
        let rule = GaussJacobi::new(16, a, b)?;
        for k in 0..16 {
            let got = rule.integrate(0.0, 1.0, |s| s.powi(k));
            let exact = ln_beta(a + 1.0, b + k as f64 + 1.0).exp();
            worst = worst.max((got - exact).abs() / exact);
        }
    }
    let mut weighted: f64 = 0.0;
    for p in [derive_constants(3, 0.0, 2.0, 1.0)?, derive_constants(2, 0.3, 1.5, 2.0)?] {
        let g = WeightedGrid::for_energies(&p, 24, AngularRule::Isotropic)?;
        for d in 0..3 {
            let a = p.iota + d as f64;
            for k in 0..4 {
                let f: Vec<f64> = (0..g.len()).map(|i| g.radius(i).powi(k as i32)).collect();
                let exact = sigma_moment(&p, a, k);
                weighted = weighted.max((weighted_norm(&g, &f, a)? - exact).abs() / exact);
            }
        }
    }
    Ok(vec![
        check(
            "quadrature",
            "quadrature.jacobi_beta_moments",
            worst <= 1e-10,
            worst,
            "max rel. error ≤ 1e-10",
        ),
        check(
            "quadrature",
            "quadrature.sigma_moments",
            weighted <= 1e-10,
            weighted,
            "max rel. error ≤ 1e-10",
        ),
    ])
}

fn wavy(eps: f64) -> impl Fn([f64; 3]) -> [f64; 3] + Sync + Send {
    move |y: [f64; 3]| {
        [
            eps * (1.3 * y[0] + 0.4 * y[1]).sin() * (0.7 * y[2]).cos(),
            eps * (0.9 * y[1] - 0.5 * y[2]).cos() * (1.1 * y[0]).sin(),
            eps * (0.8 * y[2] + 0.6 * y[0]).sin() + eps * 0.3 * (y[1] * y[0]).cos(),
        ]
    }
}

/// Residual ratios of the kinematic identities between a grid and its
/// refinement; the stencils are fourth order, so the nominal ratio is 16.
pub fn kinematics_checks(points: usize) -> Result<Vec<Check>> {
    let grid = TensorGrid::new(3, points, 1.0)?;
    let report = |g: &TensorGrid| -> Result<_> {
        let f = build_deformation(g, g.sample_vector(wavy(0.1)))?;
        check_identities(&f, &g.sample_vector(wavy(1.0)), 0.5)
    };
    let (a, b) = (report(&grid)?, report(&grid.refined())?);
    let mut out = Vec::new();
    for (name, c, f) in [
        ("kinematics.piola", a.piola, b.piola),
        ("kinematics.jacobian_gradient", a.jacobian_gradient, b.jacobian_gradient),
        ("kinematics.inverse_gradient", a.inverse_gradient, b.inverse_gradient),
    ] {
        let ratio = c / f;
        out.push(check(
            "kinematics",
            name,
            within(ratio, 16.0, 0.3),
            ratio,
            "Richardson ratio 16 ± 30%",
        ));
    }
    let adj = a.adjugate.max(b.adjugate);
    out.push(check(
        "kinematics",
        "kinematics.adjugate",
        adj < 1e-12,
        adj,
        "J A = adj(I + ∂ω) to 1e-12",
    ));
    Ok(out)
}

pub fn hardy_checks(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for p in [derive_constants(3, 0.0, 2.0, 1.0)?, derive_constants(2, 0.0, 1.5, 1.0)?] {
        let coarse = hardy_family(&p, 24, 32, seed)?;
        let fine = hardy_family(&p, 48, 32, seed)?;
        let spread = (coarse.bound() - fine.bound()).abs() / fine.bound();
        let pass = fine.bound().is_finite() && fine.bound() > 0.0 && spread < 1e-6;
        out.push(check(
            "hardy",
            format!("hardy.family_n{}", p.n),
            pass,
            fine.bound(),
            format!("finite, resolution independent (spread {spread:.1e})"),
        ));
    }
    Ok(out)
}

pub fn ode_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for lambda in [0.0, 0.3, 0.7] {
        let p = derive_constants(3, lambda, 2.0, 1.0)?;
        let path = solve_correction(&p, 1e6, DEFAULT_RTOL, DEFAULT_ATOL)?;
        let props = verify_theta_properties(&path);
        out.push(check(
            "ode",
            format!("ode.theta_properties_lambda{lambda}"),
            props.passed,
            props.min_theta_t,
            "θ > 1, θ_t > 0, envelopes and Lyapunov monotonicity",
        ));
        let fit = fit_h_window(&path, [1e2, 1e6], lambda == 0.0)?;
        let expected = h_exponent(&p);
        out.push(check(
            "ode",
            format!("ode.h_exponent_lambda{lambda}"),
            (fit.exponent - expected).abs() <= 0.05,
            fit.exponent,
            format!("{expected:.3} ± 0.05"),
        ));
    }
    Ok(out)
}

/// `F(t)/(1+t)^{λ−k}` tends to 1 with a correction of order `(1+t)^{λ−1}`,
/// so for `k < λ` it still rises near `T = 1e3`; stability is judged by the
/// change of the maximum when the horizon grows tenfold.
pub fn integrating_factor_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for lambda in [0.0, 0.3, 0.7] {
        for k in [0.5, 1.0, 2.0, 4.0] {
            let short = integrating_factor_series(lambda, k, 1e3, 20)?.max_ratio;
            let long = integrating_factor_series(lambda, k, 1e4, 20)?.max_ratio;
            let growth = long / short;
            out.push(check(
                "integrating_factor",
                format!("integrating_factor.lambda{lambda}_k{k}"),
                long.is_finite() && growth <= 1.05,
                growth,
                format!("max ratio {long:.4} grows ≤ 5% from T = 1e3 to 1e4"),
            ));
        }
    }
    Ok(out)
}

pub fn oracle_checks(seed: u64, fault: Option<Fault>) -> Result<Vec<Check>> {
    let sign = if fault == Some(Fault::PressureSign) { -1.0 } else { 1.0 };
    let mut out = Vec::new();
    for n in [2, 3] {
        let p = derive_constants(n, 0.0, 2.0, 1.0)?;
        let r = oracle_with_sign(&p, 2, seed, sign)?;
        out.push(check(
            "oracle",
            format!("oracle.radial_pressure_n{n}"),
            r.max_discrepancy < 1e-3 && r.ratio >= 0.7 * 16.0,
            r.max_discrepancy,
            format!("discrepancy < 1e-3, Richardson ratio {:.2} ≥ 11.2", r.ratio),
        ));
    }
    Ok(out)
}

pub fn zero_run_checks(nodes: usize) -> Result<Vec<Check>> {
    let p = derive_constants(3, 0.0, 2.0, 1.0)?;
    let path = solve_correction(&p, 1e4, DEFAULT_RTOL, DEFAULT_ATOL)?;
    let disc = RadialDisc::new(&p, nodes)?;
    let traj = evolve(&disc, &path, RadialState::zero(&disc), &EvolveOptions::new(output_times(1e4, 60)))?;
    let sup = traj.records.iter().map(|r| r.sup_w).fold(0.0, f64::max);
    let mut out = vec![check(
        "zero_run",
        "zero_run.preservation",
        traj.completed() && sup <= 1e-8,
        sup,
        "sup |w| ≤ 1e-8 over [0, 1e4]",
    )];
    let mass = traj.records.iter().map(|r| (r.mass - 1.0).abs()).fold(0.0, f64::max);
    out.push(check(
        "zero_run",
        "zero_run.mass",
        mass <= 1e-8,
        mass,
        "reconstructed mass within 1e-8",
    ));
    let rates = gap_rate_report(&traj.records, &path, 0.1)?;
    let id = rates.identity.unwrap_or([f64::NAN; 3]);
    out.push(check(
        "zero_run",
        "zero_run.closed_forms",
        rates.identity_pass == Some(true),
        id.iter().cloned().fold(0.0, f64::max),
        "gaps equal their closed forms to 1e-10",
    ));
    for f in &rates.fits {
        out.push(check(
            "zero_run",
            format!("zero_run.{}_exponent", f.gap.name().replace(' ', "_")),
            f.pass,
            f.fit.exponent,
            format!("{:.3} ± {}", f.expected, f.tolerance),
        ));
    }
    Ok(out)
}

pub fn curl_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for lambda in [0.0, 0.5] {
        let p = derive_constants(2, lambda, 2.0, 1.0)?;
        let path = solve_correction(&p, 20.0, DEFAULT_RTOL, DEFAULT_ATOL)?;
        let disc = ModeDisc::new(&p, 2, 24)?;
        let init = curl_mode(&disc, 1e-3)?;
        let coarse = curl_decay_fit(&evolve_mode(&disc, &path, init.clone(), &ModeOptions::new(20.0, 0.1))?)?;
        let fine = curl_decay_fit(&evolve_mode(&disc, &path, init, &ModeOptions::new(20.0, 0.05))?)?;
        out.push(check(
            "curl_envelope",
            format!("curl_envelope.lambda{lambda}"),
            coarse.max_deviation <= 1e-3,
            coarse.max_deviation,
            "max rel. deviation ≤ 1e-3",
        ));
        let gain = coarse.max_deviation / fine.max_deviation;
        out.push(check(
            "curl_envelope",
            format!("curl_envelope.refinement_lambda{lambda}"),
            gain >= 2.0,
            gain,
            "deviation at least halves when dt halves",
        ));
    }
    Ok(out)
}

pub fn pme_checks(params: &PhysParams) -> Result<Vec<Check>> {
    let h = 0.08;
    let ratio = pme_residual(params, 1.0, h)? / pme_residual(params, 1.0, h / 2.0)?;
    let mut mass_err: f64 = 0.0;
    for t in [0.0, 0.5, 1.0, 10.0, 1e2, 1e3, 1e4] {
        mass_err = mass_err.max((mass_at(params, t)? - params.mass).abs() / params.mass);
    }
    Ok(vec![
        check(
            "pme",
            "pme.residual_order",
            within(ratio, 4.0, 0.2),
            ratio,
            "Richardson ratio 4 ± 20%",
        ),
        check("pme", "pme.mass", mass_err <= 1e-8, mass_err, "mass conserved to 1e-8"),
    ])
}

/// Run the selected groups in parallel; errors inside a group become
/// failing checks rather than aborting the suite.
pub fn verify(opts: &SuiteOptions) -> Result<SuiteReport> {
    if let Some(only) = &opts.only {
        if !GROUPS.contains(&only.as_str()) {
            return Err(crate::error::invalid(
                "only",
                format!("unknown group {only}; expected one of {}", GROUPS.join(", ")),
            ));
        }
    }
    let groups: Vec<&str> = GROUPS
        .iter()
        .copied()
        .filter(|g| opts.only.as_deref().is_none_or(|o| o == *g))
        .collect();
    let seed = opts.seed;
    let fault = opts.fault;
    let nodes = opts.zero_run_nodes;
    let results = exec::map(opts.execution, &groups, |&g| {
        let r = match g {
            "quadrature" => quadrature_checks(),
            "kinematics" => kinematics_checks(25),
            "hardy" => hardy_checks(seed),
            "ode" => ode_checks(),
            "integrating_factor" => integrating_factor_checks(),
            "oracle" => oracle_checks(seed, fault),
            "zero_run" => zero_run_checks(nodes),
            "curl_envelope" => curl_checks(),
            "pme" => derive_constants(3, 0.0, 2.0, 1.0).and_then(|p| pme_checks(&p)),
            _ => unreachable!(),
        };
        r.unwrap_or_else(|e| failed(g, g, e))
    });
    let checks: Vec<Check> = results.into_iter().flatten().collect();
    let pass = checks.iter().all(|c| c.pass);
    Ok(SuiteReport { seed, fault, checks, pass })
}
