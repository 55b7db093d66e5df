//! The scalar correction `h(t)` to the self-similar expansion rate.
//!
//! `θ = ν + h` solves `θ'' + (1+t)^{-λ} θ' = κ θ^{-p}` with `θ(0) = 1`,
//! `θ'(0) = κ`, where `p = nγ − n + 1`. Since `ν` solves the same equation
//! up to the forcing `ν''`, integrating `h` directly avoids the cancellation
//! in `θ − ν` that would otherwise swamp the decaying correction:
//!
//! `h'' = −(1+t)^{-λ} h' + κ ν^{-p} ((1 + h/ν)^{-p} − 1) − ν''`.

use crate::diagnostics::{decay_fit, log_times, DecayFit};
use crate::error::{invalid, Error, Result};
use crate::integrate::Dopri5;
use crate::params::PhysParams;
use crate::quadrature::adaptive_gk;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Dense-output samples per decade of time.
pub const SAMPLES_PER_DECADE: usize = 1000;
const FIRST_SAMPLE: f64 = 1e-3;

/// Default tolerances. `h_t` falls to ~1e-11 by `t = 1e6`, so the absolute
/// tolerance has to sit far below it for `θ'''` to stay meaningful.
pub const DEFAULT_RTOL: f64 = 1e-10;
pub const DEFAULT_ATOL: f64 = 1e-24;

/// Second derivative of `h` from the equation.
fn h_accel(params: &PhysParams, t: f64, h: f64, z: f64) -> f64 {
    let p = params.p();
    let nu = params.nu(t);
    let forcing = params.kappa * (1.0 + t).powf(-params.kappa * p) * (-p * (h / nu).ln_1p()).exp_m1();
    -(1.0 + t).powf(-params.lambda) * z + forcing - params.nu_tt(t)
}

/// `θ` and its first three derivatives at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaJet {
    pub t: f64,
    pub h: f64,
    pub h_t: f64,
    pub h_tt: f64,
    pub theta: f64,
    pub theta_t: f64,
    pub theta_tt: f64,
    pub theta_ttt: f64,
}

/// Solved correction with quintic Hermite dense output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectionPath {
    pub params: PhysParams,
    pub t: Vec<f64>,
    pub h: Vec<f64>,
    pub h_t: Vec<f64>,
    pub h_tt: Vec<f64>,
    pub rtol: f64,
    pub atol: f64,
}

impl CorrectionPath {
    /// Build a path from samples, e.g. for synthetic fixtures.
    pub fn from_samples(params: PhysParams, t: Vec<f64>, h: Vec<f64>, h_t: Vec<f64>, h_tt: Vec<f64>) -> Result<Self> {
        let len = t.len();
        for other in [h.len(), h_t.len(), h_tt.len()] {
            if other != len {
                return Err(Error::DimensionMismatch {
                    expected: len,
                    found: other,
                });
            }
        }
        if len < 2 || t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("t", "need at least two strictly increasing times"));
        }
        Ok(Self {
            params,
            t,
            h,
            h_t,
            h_tt,
            rtol: 0.0,
            atol: 0.0,
        })
    }

    pub fn t_end(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Values and derivatives at any `t` in `[0, t_end]`.
    pub fn eval(&self, t: f64) -> Result<ThetaJet> {
        let end = self.t_end();
        if !(t >= self.t[0] && t <= end * (1.0 + 1e-14)) {
            return Err(invalid("t", format!("{t} outside the solved range [{}, {end}]", self.t[0])));
        }
        let t = t.min(end);
        let k = self.t.partition_point(|&s| s <= t).clamp(1, self.t.len() - 1) - 1;
        let (t0, t1) = (self.t[k], self.t[k + 1]);
        let d = t1 - t0;
        let u = (t - t0) / d;
        let (f0, g0, a0) = (self.h[k], d * self.h_t[k], d * d * self.h_tt[k]);
        let (f1, g1, a1) = (self.h[k + 1], d * self.h_t[k + 1], d * d * self.h_tt[k + 1]);
        let c = [
            f0,
            g0,
            0.5 * a0,
            -10.0 * f0 - 6.0 * g0 - 1.5 * a0 + 10.0 * f1 - 4.0 * g1 + 0.5 * a1,
            15.0 * f0 + 8.0 * g0 + 1.5 * a0 - 15.0 * f1 + 7.0 * g1 - a1,
            -6.0 * f0 - 3.0 * g0 - 0.5 * a0 + 6.0 * f1 - 3.0 * g1 + 0.5 * a1,
        ];
        let v = c[0] + u * (c[1] + u * (c[2] + u * (c[3] + u * (c[4] + u * c[5]))));
        let dv = c[1] + u * (2.0 * c[2] + u * (3.0 * c[3] + u * (4.0 * c[4] + u * 5.0 * c[5])));
        let ddv = 2.0 * c[2] + u * (6.0 * c[3] + u * (12.0 * c[4] + u * 20.0 * c[5]));
        Ok(self.jet_from(t, v, dv / d, ddv / (d * d)))
    }

    fn jet_from(&self, t: f64, h: f64, h_t: f64, h_tt: f64) -> ThetaJet {
        let p = &self.params;
        let nu = p.nu(t);
        let theta = nu + h;
        let theta_t = p.nu_t(t) + h_t;
        let theta_tt = p.nu_tt(t) + h_tt;
        // differentiated h-equation; the third derivative of ν cancels exactly
        let pw = p.p();
        let decay = (1.0 + t).powf(-p.kappa * pw);
        let e = (-pw * (h / nu).ln_1p()).exp_m1();
        let dlog = (h_t - h * p.nu_t(t) / nu) / theta;
        let forcing_t = p.kappa * decay * (-p.kappa * pw * e / (1.0 + t) - (e + 1.0) * pw * dlog);
        let damp = (1.0 + t).powf(-p.lambda);
        let theta_ttt = p.lambda * damp / (1.0 + t) * h_t - damp * h_tt + forcing_t;
        ThetaJet {
            t,
            h,
            h_t,
            h_tt,
            theta,
            theta_t,
            theta_tt,
            theta_ttt,
        }
    }

    /// Jet at sample `k` without interpolation.
    pub fn sample(&self, k: usize) -> ThetaJet {
        self.jet_from(self.t[k], self.h[k], self.h_t[k], self.h_tt[k])
    }

    pub fn theta(&self, t: f64) -> Result<f64> {
        Ok(self.eval(t)?.theta)
    }

    /// CSV with columns `t,h,h_t,theta,theta_t`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "h", "h_t", "theta", "theta_t"])?;
        for k in 0..self.len() {
            let j = self.sample(k);
            w.write_record(&[
                format!("{:e}", j.t),
                format!("{:e}", j.h),
                format!("{:e}", j.h_t),
                format!("{:e}", j.theta),
                format!("{:e}", j.theta_t),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Output times: `0`, then log-spaced from `1e-3` to `t_end`.
fn checkpoint_times(t_end: f64) -> Vec<f64> {
    let decades = (t_end / FIRST_SAMPLE).log10();
    let count = ((decades * SAMPLES_PER_DECADE as f64).ceil() as usize).max(2) + 1;
    let mut times = vec![0.0];
    times.extend(log_times(FIRST_SAMPLE, t_end, count));
    times
}

/// Integrate the correction ODE to `t_end` with adaptive Dormand–Prince.
pub fn solve_correction(params: &PhysParams, t_end: f64, rtol: f64, atol: f64) -> Result<CorrectionPath> {
    if !(1.0..=1e8).contains(&t_end) {
        return Err(invalid("t_end", format!("must lie in [1, 1e8], got {t_end}")));
    }
    for (name, tol) in [("rtol", rtol), ("atol", atol)] {
        if !(tol > 0.0 && tol <= 1e-3) {
            return Err(invalid(name, format!("must lie in (0, 1e-3], got {tol}")));
        }
    }
    let times = checkpoint_times(t_end);
    let mut y = [0.0, 0.0];
    let mut t = 0.0;
    let mut dp = Dopri5::new(2, rtol, atol, 1e-4);
    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let theta = params.nu(t) + y[0];
        if !(theta > 0.0) || !y[1].is_finite() {
            return Err(Error::Integrator {
                t,
                reason: format!("θ = {theta} left the admissible range"),
            });
        }
        dy[0] = y[1];
        dy[1] = h_accel(params, t, y[0], y[1]);
        Ok(())
    };
    let mut h = Vec::with_capacity(times.len());
    let mut h_t = Vec::with_capacity(times.len());
    let mut h_tt = Vec::with_capacity(times.len());
    for &target in &times {
        dp.advance(&mut rhs, &mut t, &mut y, target, |_| f64::INFINITY)?;
        h.push(y[0]);
        h_t.push(y[1]);
        h_tt.push(h_accel(params, t, y[0], y[1]));
    }
    Ok(CorrectionPath {
        params: *params,
        t: times,
        h,
        h_t,
        h_tt,
        rtol,
        atol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub quantity: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub passed: bool,
    pub first_violation: Option<Violation>,
    pub min_theta_t: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Log-log slope of `θ/ν` over the last two decades; zero without drift.
    pub ratio_drift: Option<f64>,
    /// Fitted slopes of `|d^mθ/dt^m|`, m = 1, 2, 3.
    pub derivative_slopes: [Option<f64>; 3],
    pub derivative_bounds: [f64; 3],
    pub lyapunov_violations: usize,
    pub max_ode_residual: f64,
}

/// Slack allowed on fitted derivative exponents.
pub const SLOPE_SLACK: f64 = 0.05;

/// Check positivity, the comparison with `ν`, derivative envelopes, the
/// monotone energy while `h_t ≤ 0`, and the equation residual of the dense
/// output.
pub fn verify_theta_properties(path: &CorrectionPath) -> PropertyReport {
    let p = &path.params;
    let mut first_violation = None;
    let mut min_theta_t = f64::INFINITY;
    let mut ratio_min = f64::INFINITY;
    let mut ratio_max: f64 = 0.0;
    let note = |t: f64, quantity: &str, value: f64, slot: &mut Option<Violation>| {
        if slot.is_none() {
            *slot = Some(Violation {
                t,
                quantity: quantity.to_string(),
                value,
            });
        }
    };
    let lyap_weight = p.kappa * p.p();
    let mut lyapunov_violations = 0;
    let mut prev_lyap: Option<f64> = None;
    for k in 0..path.len() {
        let j = path.sample(k);
        if j.t <= 0.0 {
            continue;
        }
        min_theta_t = min_theta_t.min(j.theta_t);
        if !(j.theta_t > 0.0) {
            note(j.t, "theta_t", j.theta_t, &mut first_violation);
        }
        if !(j.theta > 1.0) {
            note(j.t, "theta", j.theta, &mut first_violation);
        }
        let ratio = j.theta / p.nu(j.t);
        ratio_min = ratio_min.min(ratio);
        ratio_max = ratio_max.max(ratio);
        if j.h_t <= 0.0 {
            let l = lyap_weight * j.h * j.h + (1.0 + j.t).powf(p.lambda + 1.0) * j.h_t * j.h_t;
            if let Some(prev) = prev_lyap {
                if l > prev * (1.0 + 1e-8) + 1e-300 {
                    lyapunov_violations += 1;
                }
            }
            prev_lyap = Some(l);
        } else {
            prev_lyap = None;
        }
    }

    let t_end = path.t_end();
    let window = if t_end >= 1e4 { [1e2, t_end] } else { [t_end / 100.0, t_end] };
    let times: Vec<f64> = path.t.iter().copied().filter(|&t| t > 0.0).collect();
    let mut derivative_slopes = [None; 3];
    if t_end >= 100.0 {
        let jets: Vec<ThetaJet> = times.iter().map(|&t| path.eval(t).unwrap()).collect();
        for (m, slot) in derivative_slopes.iter_mut().enumerate() {
            let series: Vec<f64> = jets.iter().map(|j| [j.theta_t, j.theta_tt, j.theta_ttt][m].abs()).collect();
            *slot = decay_fit(&times, &series, window, false).ok().map(|f| f.exponent);
        }
    }
    let derivative_bounds = [p.kappa - 1.0, p.kappa - 2.0, p.kappa - 3.0];
    for m in 0..3 {
        if let Some(slope) = derivative_slopes[m] {
            if slope > derivative_bounds[m] + SLOPE_SLACK {
                note(
                    t_end,
                    ["theta_t slope", "theta_tt slope", "theta_ttt slope"][m],
                    slope,
                    &mut first_violation,
                );
            }
        }
    }

    let ratio_drift = if t_end >= 100.0 {
        let ratios: Vec<f64> = times.iter().map(|&t| path.eval(t).unwrap().theta / p.nu(t)).collect();
        decay_fit(&times, &ratios, [t_end / 100.0, t_end], false).ok().map(|f| f.exponent)
    } else {
        None
    };

    // residual of the equation at interval midpoints, relative to its terms
    let mut max_ode_residual: f64 = 0.0;
    for w in path.t.windows(2) {
        let tm = 0.5 * (w[0] + w[1]);
        let j = path.eval(tm).unwrap();
        let damp = (1.0 + tm).powf(-p.lambda) * j.theta_t;
        let force = p.kappa * j.theta.powf(-p.p());
        let scale = j.h_tt.abs() + damp.abs() + force.abs() * 1e-6 + f64::MIN_POSITIVE;
        let res = j.h_tt - h_accel(p, tm, j.h, j.h_t);
        max_ode_residual = max_ode_residual.max(res.abs() / scale.max(j.h_tt.abs().max(1e-300)));
    }

    let passed = first_violation.is_none() && lyapunov_violations == 0;
    PropertyReport {
        passed,
        first_violation,
        min_theta_t,
        ratio_min,
        ratio_max,
        ratio_drift,
        derivative_slopes,
        derivative_bounds,
        lyapunov_violations,
        max_ode_residual,
    }
}

/// Fit `|h|` on `window`.
pub fn fit_h_window(path: &CorrectionPath, window: [f64; 2], log_corrected: bool) -> Result<DecayFit> {
    let abs: Vec<f64> = path.h.iter().map(|h| h.abs()).collect();
    decay_fit(&path.t, &abs, window, log_corrected)
}

/// Tail fit of `|h|` over `[T/100, T]`, with the logarithmic factor when
/// `λ = 0`.
pub fn fit_h_envelope(path: &CorrectionPath) -> Result<DecayFit> {
    let t_end = path.t_end();
    if t_end < 1e4 {
        return Err(Error::FitWindow(format!("path ends at {t_end}, need at least 1e4")));
    }
    fit_h_window(path, [t_end / 100.0, t_end], path.params.lambda == 0.0)
}

/// Expected tail exponent of `|h|`: `κ + λ − 1`.
pub fn h_exponent(params: &PhysParams) -> f64 {
    params.kappa + params.lambda - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratingFactorReport {
    pub lambda: f64,
    pub k: f64,
    pub t_end: f64,
    /// `(t, F(t) / (1+t)^{λ−k})`
    pub samples: Vec<[f64; 2]>,
    pub max_ratio: f64,
    /// Log-log slope of the ratio over the last decade.
    pub tail_slope: f64,
}

/// Growth tolerance on the tail slope of the ratio.
pub const NO_GROWTH_SLOPE: f64 = 1e-2;

impl IntegratingFactorReport {
    pub fn no_growth(&self) -> bool {
        self.max_ratio.is_finite() && self.tail_slope <= NO_GROWTH_SLOPE
    }
}

/// `F(t) = ∫_0^t exp(φ(τ) − φ(t)) (1+τ)^{−k} dτ` with `φ = (1+t)^{1−λ}/(1−λ)`.
pub fn integrating_factor_value(lambda: f64, k: f64, t: f64) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    let e = 1.0 - lambda;
    let phi_t = (1.0 + t).powf(e) / e;
    // contributions older than ~80 e-foldings are below double precision
    let lo = (t - 80.0 * (1.0 + t).powf(lambda)).max(0.0);
    let f = |tau: f64| ((1.0 + tau).powf(e) / e - phi_t).exp() * (1.0 + tau).powf(-k);
    adaptive_gk(f, lo, t, 1e-300, 1e-12)
}

pub fn integrating_factor_series(lambda: f64, k: f64, t_end: f64, per_decade: usize) -> Result<IntegratingFactorReport> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(invalid("lambda", format!("must lie in [0, 1), got {lambda}")));
    }
    if !(k > 0.0) {
        return Err(invalid("k", format!("must be positive, got {k}")));
    }
    if !(t_end >= 10.0) {
        return Err(invalid("T", format!("must be at least 10, got {t_end}")));
    }
    let count = ((t_end.log10() * per_decade as f64).ceil() as usize).max(2) + 1;
    let times = log_times(1.0, t_end, count);
    let mut samples = Vec::with_capacity(times.len());
    for &t in &times {
        let f = integrating_factor_value(lambda, k, t)?;
        samples.push([t, f / (1.0 + t).powf(lambda - k)]);
    }
    let max_ratio = samples.iter().map(|s| s[1]).fold(0.0, f64::max);
    let tail: Vec<&[f64; 2]> = samples.iter().filter(|s| s[0] >= t_end / 10.0 * (1.0 - 1e-12)).collect();
    let m = tail.len() as f64;
    let xs: Vec<f64> = tail.iter().map(|s| s[0].ln_1p()).collect();
    let ys: Vec<f64> = tail.iter().map(|s| s[1].ln()).collect();
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(IntegratingFactorReport {
        lambda,
        k,
        t_end,
        samples,
        max_ratio,
        tail_slope: sxy / sxx,
    })
}

/// Largest `F(t)/(1+t)^{λ−k}` over log-spaced `t ∈ [1, T]`.
pub fn integrating_factor_bound_check(lambda: f64, k: f64, t_end: f64) -> Result<f64> {
    Ok(integrating_factor_series(lambda, k, t_end, 40)?.max_ratio)
}
