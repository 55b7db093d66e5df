//! Power-law decay fits and comparisons of simulated runs against the
//! expected asymptotic rates.

use crate::error::{Error, Result};
use crate::ode::{CorrectionPath, ThetaJet};
use crate::params::PhysParams;
use crate::radial::OutputRecord;
use crate::weighted::EnergyReport;
use serde::{Deserialize, Serialize};

/// Least-squares power law `v ≈ C (1+t)^e`, optionally times `1 + ln(1+t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub exponent: f64,
    pub constant: f64,
    pub window: [f64; 2],
    pub residual: f64,
    pub log_corrected: bool,
    pub samples: usize,
    pub excluded: usize,
}

pub const MIN_FIT_SAMPLES: usize = 50;
pub const MIN_FIT_DECADES: f64 = 2.0;

fn log_factor(t: f64) -> f64 {
    1.0 + t.ln_1p()
}

/// Fit `values` against `times` on `window`; nonpositive values are skipped
/// and counted in `excluded`.
pub fn decay_fit(times: &[f64], values: &[f64], window: [f64; 2], log_corrected: bool) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            found: values.len(),
        });
    }
    let [lo, hi] = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::FitWindow(format!("window [{lo}, {hi}] is not a positive interval")));
    }
    if (hi / lo).log10() < MIN_FIT_DECADES - 1e-9 {
        return Err(Error::FitWindow(format!(
            "window [{lo}, {hi}] spans fewer than {MIN_FIT_DECADES} decades"
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = 0;
    for (&t, &v) in times.iter().zip(values) {
        if t < lo * (1.0 - 1e-12) || t > hi * (1.0 + 1e-12) {
            continue;
        }
        if !(v > 0.0) || !v.is_finite() {
            excluded += 1;
            continue;
        }
        let mut y = v.ln();
        if log_corrected {
            y -= log_factor(t).ln();
        }
        xs.push(t.ln_1p());
        ys.push(y);
    }
    if xs.is_empty() && excluded > 0 {
        return Err(Error::DegenerateFit(format!(
            "all {excluded} samples in the window are zero or negative"
        )));
    }
    if xs.len() < MIN_FIT_SAMPLES {
        return Err(Error::FitWindow(format!(
            "{} usable samples in window, need {MIN_FIT_SAMPLES}",
            xs.len()
        )));
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(DecayFit {
        exponent: slope,
        constant: intercept.exp(),
        window,
        residual: (rss / m).sqrt(),
        log_corrected,
        samples: xs.len(),
        excluded,
    })
}

/// `n` log-spaced times in `[lo, hi]`, endpoints included.
pub fn log_times(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| {
            if k + 1 == n {
                hi
            } else {
                (a + (b - a) * k as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Fit window for the rate report: the last two decades of the run.
pub fn tail_window(t_end: f64) -> [f64; 2] {
    [t_end / 100.0, t_end]
}

/// Default tolerance on exponents that must match a closed form.
pub const MATCH_TOLERANCE: f64 = 0.05;
/// Relative agreement required of the anchor gaps with their closed forms.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gap {
    Position,
    Density,
    Velocity,
}

impl Gap {
    pub const ALL: [Gap; 3] = [Gap::Position, Gap::Density, Gap::Velocity];

    pub fn name(self) -> &'static str {
        match self {
            Gap::Position => "position",
            Gap::Density => "relative density",
            Gap::Velocity => "velocity",
        }
    }

    fn of(self, r: &OutputRecord) -> f64 {
        match self {
            Gap::Position => r.position_gap,
            Gap::Density => r.density_gap,
            Gap::Velocity => r.velocity_gap,
        }
    }

    /// The gap of the unperturbed motion, driven by `h` alone.
    pub fn closed_form(self, params: &PhysParams, j: &ThetaJet) -> f64 {
        match self {
            Gap::Position => j.h.abs() * params.r0,
            Gap::Density => (j.theta.powf(-(params.n as f64)) - params.nu(j.t).powf(-(params.n as f64))).abs(),
            Gap::Velocity => j.h_t.abs() * params.r0,
        }
    }

    /// Exponent of the `h`-driven rate.
    pub fn anchor_exponent(self, params: &PhysParams) -> f64 {
        let base = params.lambda - 1.0;
        match self {
            Gap::Position => params.kappa + base,
            Gap::Density => -(params.n as f64) * params.kappa + base,
            Gap::Velocity => params.kappa + base - 1.0,
        }
    }

    /// Exponent of the general bound, where the initial energy term dominates.
    pub fn bound_exponent(self, params: &PhysParams) -> f64 {
        match self {
            Gap::Position => params.kappa,
            Gap::Density => -(params.n as f64) * params.kappa,
            Gap::Velocity => params.kappa - 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapFit {
    pub gap: Gap,
    pub fit: DecayFit,
    pub expected: f64,
    /// Match within the tolerance (anchor) or stay below `expected + slack`.
    pub exact_match: bool,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// The perturbation vanished at every output.
    pub anchor: bool,
    /// Largest relative deviation of each gap from its closed form (anchor
    /// runs only).
    pub identity: Option<[f64; 3]>,
    pub identity_pass: Option<bool>,
    pub fits: Vec<GapFit>,
    /// Earliest output time after which the position gap stays within 10%
    /// of its `h`-driven part.
    pub crossover: Option<f64>,
    pub pass: bool,
}

impl RateReport {
    pub fn summary(&self) -> String {
        let mut out = format!("{:<18} {:>10} {:>10} {:>8}  result\n", "gap", "exponent", "expected", "tol");
        for f in &self.fits {
            let rel = if f.exact_match { "±" } else { "+" };
            out.push_str(&format!(
                "{:<18} {:>10.4} {:>10.4} {:>7}{:.2}  {}\n",
                f.gap.name(),
                f.fit.exponent,
                f.expected,
                rel,
                f.tolerance,
                if f.pass { "ok" } else { "FAIL" }
            ));
        }
        if let Some(id) = self.identity {
            out.push_str(&format!(
                "closed-form identity: max rel. err {:.2e} {:.2e} {:.2e}\n",
                id[0], id[1], id[2]
            ));
        }
        if let Some(t) = self.crossover {
            out.push_str(&format!("h-driven regime from t ≈ {t:.3e}\n"));
        }
        out
    }
}

/// Compare the gaps of a radial trajectory with the expected rates. Anchor
/// runs must reproduce the closed forms and their exponents; perturbed runs
/// must not decay slower than the general bound plus `slack`.
pub fn gap_rate_report(records: &[OutputRecord], path: &CorrectionPath, slack: f64) -> Result<RateReport> {
    let params = &path.params;
    if records.is_empty() {
        return Err(Error::FitWindow("trajectory has no reconstruction records".into()));
    }
    let times: Vec<f64> = records.iter().map(|r| r.t).collect();
    let t_end = *times.last().unwrap();
    let window = tail_window(t_end);
    let anchor = records.iter().all(|r| r.sup_w == 0.0);
    let jets: Vec<ThetaJet> = times.iter().map(|&t| path.eval(t)).collect::<Result<_>>()?;

    let identity = anchor.then(|| {
        Gap::ALL.map(|g| {
            records
                .iter()
                .zip(&jets)
                .map(|(r, j)| {
                    let exact = g.closed_form(params, j);
                    let got = g.of(r);
                    if exact == 0.0 {
                        got.abs()
                    } else {
                        (got - exact).abs() / exact
                    }
                })
                .fold(0.0, f64::max)
        })
    });
    let log = params.lambda == 0.0;
    let mut fits = Vec::new();
    for g in Gap::ALL {
        let values: Vec<f64> = records.iter().map(|r| g.of(r)).collect();
        let (expected, exact_match, tolerance, log_corrected) = if anchor {
            (g.anchor_exponent(params), true, MATCH_TOLERANCE, log)
        } else {
            (g.bound_exponent(params), false, slack, false)
        };
        let fit = decay_fit(&times, &values, window, log_corrected)?;
        let pass = if exact_match {
            (fit.exponent - expected).abs() <= tolerance
        } else {
            fit.exponent <= expected + tolerance
        };
        fits.push(GapFit {
            gap: g,
            fit,
            expected,
            exact_match,
            tolerance,
            pass,
        });
    }
    let crossover = if anchor {
        None
    } else {
        let close: Vec<bool> = records
            .iter()
            .zip(&jets)
            .map(|(r, j)| {
                let h = Gap::Position.closed_form(params, j);
                h > 0.0 && (r.position_gap - h).abs() <= 0.1 * h
            })
            .collect();
        close.iter().rposition(|c| !c).and_then(|k| times.get(k + 1).copied())
    };
    let identity_pass = identity.map(|id| id.iter().all(|e| *e <= IDENTITY_TOLERANCE));
    let pass = fits.iter().all(|f| f.pass) && identity_pass.unwrap_or(true);
    Ok(RateReport {
        anchor,
        identity,
        identity_pass,
        fits,
        crossover,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRatio {
    pub label: String,
    pub initial: f64,
    pub sup: f64,
    /// `None` when the component starts at zero.
    pub ratio: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundednessReport {
    /// False when the initial total energy vanishes.
    pub applicable: bool,
    pub threshold: f64,
    pub components: Vec<ComponentRatio>,
    pub total: ComponentRatio,
    pub pass: bool,
}

fn ratio_of(label: String, series: &[f64], threshold: f64) -> ComponentRatio {
    let initial = series.first().copied().unwrap_or(0.0);
    let sup = series.iter().cloned().fold(0.0, f64::max);
    let ratio = (initial > 0.0).then(|| sup / initial);
    ComponentRatio {
        label,
        initial,
        sup,
        ratio,
        flagged: ratio.is_some_and(|r| r > threshold) || (initial == 0.0 && sup > 0.0),
    }
}

/// `sup_t E(t)/E(0)` per component and for the total.
pub fn boundedness_report(energies: &EnergyReport, threshold: f64) -> Result<BoundednessReport> {
    if energies.times.is_empty() {
        return Err(Error::FitWindow("energy report is empty".into()));
    }
    let components: Vec<ComponentRatio> = energies
        .indices
        .iter()
        .map(|&k| ratio_of(k.label(), &energies.column(k).unwrap(), threshold))
        .collect();
    let total = ratio_of("total".into(), &energies.total(), threshold);
    let applicable = total.initial > 0.0;
    let pass = applicable && !total.flagged && components.iter().all(|c| !c.flagged);
    Ok(BoundednessReport {
        applicable,
        threshold,
        components,
        total,
        pass,
    })
}

/// Relative difference of the total ratios of two runs.
pub fn ratio_spread(a: &BoundednessReport, b: &BoundednessReport) -> Option<f64> {
    let (x, y) = (a.total.ratio?, b.total.ratio?);
    Some((x - y).abs() / x.max(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn recovers_synthetic_powers() {
        let t = log_times(1.0, 1e4, 400);
        let v: Vec<f64> = t.iter().map(|t| 3.0 * (1.0 + t).powf(-0.6)).collect();
        let f = decay_fit(&t, &v, [10.0, 1e4], false).unwrap();
        assert_relative_eq!(f.exponent, -0.6, epsilon = 1e-9);
        assert_relative_eq!(f.constant, 3.0, max_relative = 1e-9);

        let w: Vec<f64> = t.iter().map(|t| (1.0 + t).powf(-0.8) * (1.0 + t.ln_1p())).collect();
        let g = decay_fit(&t, &w, [10.0, 1e4], true).unwrap();
        assert_relative_eq!(g.exponent, -0.8, epsilon = 1e-9);

        let c = vec![2.5; t.len()];
        assert!(decay_fit(&t, &c, [1.0, 1e4], false).unwrap().exponent.abs() < 1e-9);
    }

    #[test]
    fn rejects_short_windows_and_zero_series() {
        let t = log_times(1.0, 1e4, 400);
        let v = vec![1.0; t.len()];
        assert!(matches!(decay_fit(&t, &v, [10.0, 500.0], false), Err(Error::FitWindow(_))));
        let sparse = log_times(1.0, 1e4, 20);
        assert!(matches!(
            decay_fit(&sparse, &[1.0; 20], [1.0, 1e4], false),
            Err(Error::FitWindow(_))
        ));
        let z = vec![0.0; t.len()];
        assert!(matches!(decay_fit(&t, &z, [1.0, 1e4], false), Err(Error::DegenerateFit(_))));
    }

    use crate::ode::{solve_correction, DEFAULT_ATOL, DEFAULT_RTOL};
    use crate::params::derive_constants;
    use crate::radial::{evolve, output_times, EvolveOptions, RadialDisc, RadialState, SeedShape};
    use crate::weighted::{truncated_index_set, EnergyIndex};

    fn run(eps: f64, energies: bool) -> (crate::radial::Trajectory, CorrectionPath) {
        let p = derive_constants(3, 0.0, 2.0, 1.0).unwrap();
        let path = solve_correction(&p, 1e4, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        let disc = RadialDisc::new(&p, 24).unwrap();
        let init = RadialState::from_profile(&disc, SeedShape::Bump.profile(p.r0, eps));
        let mut opts = EvolveOptions::new(output_times(1e4, 40));
        if energies {
            opts.energy_nodes = Some(12);
        }
        (evolve(&disc, &path, init, &opts).unwrap(), path)
    }

    #[test]
    fn anchor_run_reproduces_closed_forms() {
        let (traj, path) = run(0.0, false);
        let rep = gap_rate_report(&traj.records, &path, 0.1).unwrap();
        assert!(rep.anchor);
        assert!(rep.identity.unwrap().iter().all(|e| *e <= 1e-10), "{rep:?}");
        let expected = [-0.8, -1.6, -1.8];
        for (f, e) in rep.fits.iter().zip(expected) {
            assert_relative_eq!(f.expected, e, epsilon = 1e-12);
            assert!(f.pass, "{}", rep.summary());
        }
        assert!(rep.pass);
    }

    #[test]
    fn perturbed_run_respects_bounds() {
        let (traj, path) = run(1e-3, true);
        let rep = gap_rate_report(&traj.records, &path, 0.1).unwrap();
        assert!(!rep.anchor && rep.identity.is_none());
        let v = rep.fits.iter().find(|f| f.gap == Gap::Velocity).unwrap();
        assert!(v.fit.exponent <= -0.7, "{}", rep.summary());
        assert!(rep.pass, "{}", rep.summary());
        let b = boundedness_report(traj.energies.as_ref().unwrap(), 10.0).unwrap();
        assert!(b.applicable && b.pass, "{b:?}");
        assert_eq!(b.components.len(), 10);
        let strict = boundedness_report(traj.energies.as_ref().unwrap(), 1.0).unwrap();
        assert!(!strict.pass && strict.components.iter().any(|c| c.flagged));
    }

    #[test]
    fn zero_energy_is_not_applicable() {
        let mut e = EnergyReport::new(truncated_index_set());
        e.push(0.0, vec![0.0; 10]);
        e.push(1.0, vec![0.0; 10]);
        let b = boundedness_report(&e, 10.0).unwrap();
        assert!(!b.applicable && !b.pass);
        assert!(b.total.ratio.is_none());
        let mut one = EnergyReport::new(vec![EnergyIndex::new(0, 0, 0)]);
        one.push(0.0, vec![2.0]);
        one.push(1.0, vec![3.0]);
        let r = boundedness_report(&one, 10.0).unwrap();
        assert_eq!(r.total.ratio, Some(1.5));
        assert_eq!(ratio_spread(&r, &r), Some(0.0));
    }
}
