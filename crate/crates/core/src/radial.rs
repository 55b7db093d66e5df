//! Nonlinear radially symmetric perturbations `ω = w(r) ŷ`.
//!
//! The unknown is `q = w/r` as a function of `s = r²/R0²`, which makes `w`
//! odd in `r` and regular at the center by construction. Collocation nodes
//! are Gauss–Jacobi points in `s` for the weight `(1−s)^ι s^{n/2−1}`, so
//! they cluster at the vacuum boundary and no boundary condition is imposed
//! there. The pressure term is discretized in the weak form obtained by
//! testing `σ^{−ι}∂(σ^{ι+1}·)` against `σ^ι r^n v`; with these nodes the mass
//! matrix is diagonal.

use crate::error::{invalid, Error, Result};
use crate::exec::{self, Execution};
use crate::integrate::Dopri5;
use crate::jet::{Jet, VectorJet};
use crate::kinematics::{build_deformation, derivative, DeformationField, TensorGrid};
use crate::ode::{CorrectionPath, ThetaJet};
use crate::params::PhysParams;
use crate::quadrature::{Barycentric, GaussJacobi};
use crate::taylor::{Scalar, Taylor2};
use crate::weighted::{energy_components, truncated_index_set, AngularRule, EnergyIndex, EnergyReport, JetSource, WeightedGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_SCHEMA: &str = "vacuumlab.radial-state/1";
/// Fraction of the explicit stability limit used as a step cap.
const CFL: f64 = 2.0;
const MIN_NODES: usize = 4;

/// Collocation data for one resolution.
#[derive(Debug, Clone)]
pub struct RadialDisc {
    pub params: PhysParams,
    pub s: Vec<f64>,
    pub weights: Vec<f64>,
    pub r: Vec<f64>,
    diff: Vec<f64>,
    interp: Barycentric,
    /// Largest eigenvalue of the linearized `κ + Π` operator.
    pub lambda_max: f64,
    pub execution: Execution,
}

fn matvec<S: Scalar>(exec: Execution, m: &[f64], x: &[S]) -> Vec<S> {
    let n = x.len();
    let row = |i: usize| {
        let mut acc = S::cst(0.0);
        for (a, b) in m[i * n..(i + 1) * n].iter().zip(x) {
            acc = acc + *b * *a;
        }
        acc
    };
    if n >= 128 {
        exec::map_range(exec, n, row)
    } else {
        (0..n).map(row).collect()
    }
}

fn matvec_t<S: Scalar>(m: &[f64], x: &[S]) -> Vec<S> {
    let n = x.len();
    let mut out = vec![S::cst(0.0); n];
    for (i, xi) in x.iter().enumerate() {
        for (o, a) in out.iter_mut().zip(&m[i * n..(i + 1) * n]) {
            *o = *o + *xi * *a;
        }
    }
    out
}

/// Damping and stiffness factors of the equation at one time.
#[derive(Debug, Clone, Copy)]
pub struct Coefficients<S> {
    /// `(1+t)^{−λ} + 2θ_t/θ`
    pub damping: S,
    /// `θ^{−(nγ−n+2)}`
    pub stiffness: S,
}

impl Coefficients<f64> {
    pub fn at(params: &PhysParams, j: &ThetaJet) -> Self {
        Self {
            damping: (1.0 + j.t).powf(-params.lambda) + 2.0 * j.theta_t / j.theta,
            stiffness: j.theta.powf(-(params.p() + 1.0)),
        }
    }
}

impl Coefficients<Taylor2> {
    /// Time jets of the coefficients.
    pub fn jet(params: &PhysParams, j: &ThetaJet) -> Self {
        let one_t = Taylor2::new(1.0 + j.t, 1.0, 0.0);
        let th = Taylor2::new(j.theta, j.theta_t, 0.5 * j.theta_tt);
        let tht = Taylor2::new(j.theta_t, j.theta_tt, 0.5 * j.theta_ttt);
        Self {
            damping: one_t.powf(-params.lambda) + tht * 2.0 / th,
            stiffness: th.powf(-(params.p() + 1.0)),
        }
    }
}

impl RadialDisc {
    pub fn new(params: &PhysParams, nodes: usize) -> Result<Self> {
        Self::with_execution(params, nodes, Execution::available())
    }

    pub fn with_execution(params: &PhysParams, nodes: usize, execution: Execution) -> Result<Self> {
        if nodes < MIN_NODES {
            return Err(invalid("nodes", format!("need at least {MIN_NODES}, got {nodes}")));
        }
        let rule = GaussJacobi::new(nodes, params.iota, 0.5 * params.n as f64 - 1.0)?;
        let (s, weights) = rule.mapped(0.0, 1.0);
        let r = s.iter().map(|s| params.r0 * s.sqrt()).collect();
        let interp = Barycentric::new(&s);
        let diff = interp.differentiation_matrix();
        let mut disc = Self {
            params: *params,
            s,
            weights,
            r,
            diff,
            interp,
            lambda_max: 0.0,
            execution,
        };
        disc.lambda_max = disc.power_iteration(400);
        Ok(disc)
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// `d^k q/ds^k` at the nodes.
    pub fn s_derivative(&self, q: &[f64]) -> Vec<f64> {
        matvec(self.execution, &self.diff, q)
    }

    /// Interpolated value at any `s ∈ [0, 1]`.
    pub fn eval(&self, q: &[f64], s: f64) -> f64 {
        self.interp.eval(s, q)
    }

    /// Nodal `q = w/r` of a profile `w(r)`.
    pub fn project<F: Fn(f64) -> f64>(&self, w: F) -> Vec<f64> {
        self.r.iter().map(|&r| w(r) / r).collect()
    }

    /// `w = r q` at the nodes.
    pub fn w_of(&self, q: &[f64]) -> Vec<f64> {
        q.iter().zip(&self.r).map(|(q, r)| q * r).collect()
    }

    /// `1 + w_r` and `1 + w/r` at the nodes.
    pub fn stretches(&self, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dq = self.s_derivative(q);
        let radial = (0..self.len()).map(|j| 1.0 + q[j] + 2.0 * self.s[j] * dq[j]).collect();
        let hoop = q.iter().map(|q| 1.0 + q).collect();
        (radial, hoop)
    }

    /// Weak-form pressure `Π ≈ P/r` with
    /// `P = σ^{−ι}[(σ^{ι+1} a)' + (n−1) σ^{ι+1}(a−b)/r]`.
    pub fn pressure<S: Scalar>(&self, q: &[S], t: f64, linear: bool) -> Result<Vec<S>> {
        let p = &self.params;
        let n = self.len();
        let nf = p.n as f64;
        let g = p.gamma;
        let dq = matvec(self.execution, &self.diff, q);
        let mut ca = Vec::with_capacity(n);
        let mut diag = Vec::with_capacity(n);
        for j in 0..n {
            let wp = q[j] + dq[j] * (2.0 * self.s[j]);
            let (a, b) = if linear {
                (
                    wp * (-g) - q[j] * ((g - 1.0) * (nf - 1.0)),
                    wp * (1.0 - g) - q[j] * ((g - 1.0) * (nf - 1.0) + 1.0),
                )
            } else {
                let (sr, sh) = (1.0 + wp.value(), 1.0 + q[j].value());
                if !(sr > 0.0 && sh > 0.0) {
                    return Err(Error::DegenerateRadial {
                        node: j,
                        t,
                        reason: format!("stretches 1 + w_r = {sr}, 1 + w/r = {sh}"),
                    });
                }
                let lw = wp.ln_1p();
                let lq = q[j].ln_1p();
                (
                    (lw * (-g) + lq * ((1.0 - g) * (nf - 1.0))).exp_m1(),
                    (lw * (1.0 - g) + lq * ((1.0 - g) * (nf - 1.0) - 1.0)).exp_m1(),
                )
            };
            let wq = self.weights[j] * (1.0 - self.s[j]);
            ca.push(a * (2.0 * self.s[j] * wq));
            diag.push((a + b * (nf - 1.0)) * wq);
        }
        let dt = matvec_t(&self.diff, &ca);
        Ok((0..n)
            .map(|j| (dt[j] + diag[j]) * (-p.b_bar / (self.weights[j] * self.s[j])))
            .collect())
    }

    /// `q_tt = −c q_t − θ^{−(p+1)}(κ q + Π)`.
    pub fn accel<S: Scalar>(&self, q: &[S], v: &[S], c: &Coefficients<S>, t: f64) -> Result<Vec<S>> {
        let pi = self.pressure(q, t, false)?;
        Ok((0..self.len())
            .map(|j| -(c.damping * v[j]) - c.stiffness * (q[j] * self.params.kappa + pi[j]))
            .collect())
    }

    fn power_iteration(&self, iterations: usize) -> f64 {
        let n = self.len();
        let mut x: Vec<f64> = (0..n).map(|j| 1.0 + 0.37 * (j as f64).sin()).collect();
        let mut est = 0.0;
        for _ in 0..iterations {
            let pi = self.pressure(&x, 0.0, true).unwrap();
            let y: Vec<f64> = (0..n).map(|j| self.params.kappa * x[j] + pi[j]).collect();
            // the operator is symmetric in the mass inner product
            let dot = |a: &[f64], b: &[f64]| -> f64 { (0..n).map(|j| self.weights[j] * self.s[j] * a[j] * b[j]).sum() };
            let norm = dot(&y, &y).sqrt();
            est = dot(&x, &y) / dot(&x, &x);
            if norm == 0.0 {
                break;
            }
            x = y.into_iter().map(|v| v / norm).collect();
        }
        est.abs() * 1.05
    }

    /// Largest stable step at time `t`.
    pub fn step_cap(&self, theta: f64) -> f64 {
        CFL / (self.lambda_max * theta.powf(-(self.params.p() + 1.0))).sqrt()
    }
}

/// Strong form `P(r)` for a profile given through `q`, `q_s`, `q_ss` at `s`.
pub fn strong_pressure(params: &PhysParams, r: f64, q: f64, q_s: f64, q_ss: f64) -> f64 {
    let nf = params.n as f64;
    let g = params.gamma;
    let s = r * r / (params.r0 * params.r0);
    let s_r = 2.0 * r / (params.r0 * params.r0);
    let wp = q + 2.0 * s * q_s;
    let wpp = s_r * (3.0 * q_s + 2.0 * s * q_ss);
    let q_r = s_r * q_s;
    let la = -g * wp.ln_1p() + (1.0 - g) * (nf - 1.0) * q.ln_1p();
    let a = la.exp_m1();
    let b = ((1.0 - g) * wp.ln_1p() + ((1.0 - g) * (nf - 1.0) - 1.0) * q.ln_1p()).exp_m1();
    let a_r = (1.0 + a) * (-g * wpp / (1.0 + wp) + (1.0 - g) * (nf - 1.0) * q_r / (1.0 + q));
    let sigma = params.sigma(r);
    let sigma_r = -2.0 * params.b_bar * r;
    sigma * a_r + (params.iota + 1.0) * sigma_r * a + (nf - 1.0) * sigma * (a - b) / r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialState {
    pub t: f64,
    /// `w/r` at the nodes.
    pub q: Vec<f64>,
    /// `∂_t(w/r)` at the nodes.
    pub q_t: Vec<f64>,
}

impl RadialState {
    pub fn zero(disc: &RadialDisc) -> Self {
        Self {
            t: 0.0,
            q: vec![0.0; disc.len()],
            q_t: vec![0.0; disc.len()],
        }
    }

    /// At rest with `w = w0(r)`.
    pub fn from_profile<F: Fn(f64) -> f64>(disc: &RadialDisc, w0: F) -> Self {
        Self {
            t: 0.0,
            q: disc.project(w0),
            q_t: vec![0.0; disc.len()],
        }
    }

    pub fn check(&self, disc: &RadialDisc) -> Result<()> {
        if self.q.len() != disc.len() || self.q_t.len() != disc.len() {
            return Err(Error::DimensionMismatch {
                expected: disc.len(),
                found: self.q.len(),
            });
        }
        if self.q.iter().chain(&self.q_t).any(|v| !v.is_finite()) {
            return Err(invalid("state", "non-finite values"));
        }
        let (radial, hoop) = disc.stretches(&self.q);
        for j in 0..disc.len() {
            if !(radial[j] > 0.0 && hoop[j] > 0.0) {
                return Err(Error::DegenerateRadial {
                    node: j,
                    t: self.t,
                    reason: format!("stretches {} and {}", radial[j], hoop[j]),
                });
            }
        }
        Ok(())
    }

    /// Sup of `|w|` over the nodes and the boundary.
    pub fn sup_w(&self, disc: &RadialDisc) -> f64 {
        let boundary = (disc.params.r0 * disc.eval(&self.q, 1.0)).abs();
        disc.w_of(&self.q).iter().fold(boundary, |m, w| m.max(w.abs()))
    }
}

/// `w_tt` at the nodes.
pub fn radial_rhs(disc: &RadialDisc, state: &RadialState, path: &CorrectionPath) -> Result<Vec<f64>> {
    let j = path.eval(state.t)?;
    let c = Coefficients::at(&disc.params, &j);
    let a = disc.accel(&state.q, &state.q_t, &c, state.t)?;
    Ok(a.iter().zip(&disc.r).map(|(a, r)| a * r).collect())
}

/// `q_tt` and `q_ttt`, the latter from the differentiated equation.
pub fn time_derivatives(disc: &RadialDisc, state: &RadialState, path: &CorrectionPath) -> Result<(Vec<f64>, Vec<f64>)> {
    let j = path.eval(state.t)?;
    let q_tt = disc.accel(&state.q, &state.q_t, &Coefficients::at(&disc.params, &j), state.t)?;
    let qj: Vec<Taylor2> = (0..disc.len())
        .map(|k| Taylor2::new(state.q[k], state.q_t[k], 0.5 * q_tt[k]))
        .collect();
    let vj: Vec<Taylor2> = (0..disc.len()).map(|k| Taylor2::new(state.q_t[k], q_tt[k], 0.0)).collect();
    let acc = disc.accel(&qj, &vj, &Coefficients::jet(&disc.params, &j), state.t)?;
    Ok((q_tt, acc.iter().map(|a| a.d1()).collect()))
}

/// Serialized solver state; continuing from it reproduces the uninterrupted
/// run bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub index: usize,
    pub t: f64,
    pub nodes: usize,
    pub s: Vec<f64>,
    pub r: Vec<f64>,
    pub q: Vec<f64>,
    pub q_t: Vec<f64>,
    pub w: Vec<f64>,
    pub w_t: Vec<f64>,
    pub step_hint: f64,
    pub rtol: f64,
    pub atol: f64,
    pub accepted: usize,
    pub rejected: usize,
}

pub struct RadialSolver<'a> {
    pub disc: &'a RadialDisc,
    pub path: &'a CorrectionPath,
    pub state: RadialState,
    integrator: Dopri5,
    y: Vec<f64>,
}

impl<'a> RadialSolver<'a> {
    pub fn new(disc: &'a RadialDisc, path: &'a CorrectionPath, state: RadialState, rtol: f64, atol: f64) -> Result<Self> {
        state.check(disc)?;
        if !(rtol > 0.0 && atol > 0.0) {
            return Err(invalid("tolerance", "must be positive"));
        }
        let theta = path.theta(state.t)?;
        let hint = 1e-2 * disc.step_cap(theta);
        let n = disc.len();
        let mut y = state.q.clone();
        y.extend_from_slice(&state.q_t);
        Ok(Self {
            disc,
            path,
            state,
            integrator: Dopri5::new(2 * n, rtol, atol, hint),
            y,
        })
    }

    pub fn resume(disc: &'a RadialDisc, path: &'a CorrectionPath, cp: &Checkpoint) -> Result<Self> {
        if cp.schema != CHECKPOINT_SCHEMA {
            return Err(invalid("schema", format!("unknown checkpoint schema {}", cp.schema)));
        }
        if cp.s != disc.s {
            return Err(invalid("nodes", "checkpoint was written for a different discretization"));
        }
        let state = RadialState {
            t: cp.t,
            q: cp.q.clone(),
            q_t: cp.q_t.clone(),
        };
        let mut solver = Self::new(disc, path, state, cp.rtol, cp.atol)?;
        solver.integrator.hint = cp.step_hint;
        solver.integrator.accepted = cp.accepted;
        solver.integrator.rejected = cp.rejected;
        Ok(solver)
    }

    pub fn checkpoint(&self, index: usize) -> Checkpoint {
        Checkpoint {
            schema: CHECKPOINT_SCHEMA.into(),
            index,
            t: self.state.t,
            nodes: self.disc.len(),
            s: self.disc.s.clone(),
            r: self.disc.r.clone(),
            q: self.state.q.clone(),
            q_t: self.state.q_t.clone(),
            w: self.disc.w_of(&self.state.q),
            w_t: self.disc.w_of(&self.state.q_t),
            step_hint: self.integrator.hint,
            rtol: self.integrator.rtol,
            atol: self.integrator.atol,
            accepted: self.integrator.accepted,
            rejected: self.integrator.rejected,
        }
    }

    pub fn steps(&self) -> (usize, usize) {
        (self.integrator.accepted, self.integrator.rejected)
    }

    pub fn advance_to(&mut self, t_target: f64) -> Result<()> {
        let disc = self.disc;
        let path = self.path;
        let n = disc.len();
        let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
            let j = path.eval(t)?;
            let c = Coefficients::at(&disc.params, &j);
            let a = disc.accel(&y[..n], &y[n..], &c, t)?;
            dy[..n].copy_from_slice(&y[n..]);
            dy[n..].copy_from_slice(&a);
            Ok(())
        };
        let cap = |t: f64| path.theta(t).map(|th| disc.step_cap(th)).unwrap_or(f64::INFINITY);
        let mut t = self.state.t;
        let out = self.integrator.advance(&mut rhs, &mut t, &mut self.y, t_target, cap);
        self.state.t = t;
        self.state.q.copy_from_slice(&self.y[..n]);
        self.state.q_t.copy_from_slice(&self.y[n..]);
        out
    }
}

/// Physical fields at the nodes and at the boundary `r = R0` (last entry).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub t: f64,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub velocity: Vec<f64>,
    pub boundary_radius: f64,
    /// `∫ density dx` recovered on the quadrature.
    pub mass: f64,
    /// `sup |x − x̄|`
    pub position_gap: f64,
    /// `sup |ρ − ρ̄∘x̄| / ρ̄₀`
    pub density_gap: f64,
    /// `sup |u − ū∘x̄|`
    pub velocity_gap: f64,
}

pub fn reconstruct_physical(disc: &RadialDisc, state: &RadialState, path: &CorrectionPath) -> Result<Reconstruction> {
    state.check(disc)?;
    let p = &disc.params;
    let j = path.eval(state.t)?;
    let nf = p.n as f64;
    let nu = p.nu(state.t);
    let nu_t = p.nu_t(state.t);
    let dq = disc.s_derivative(&state.q);
    let mut s = disc.s.clone();
    s.push(1.0);
    let mut q = state.q.clone();
    q.push(disc.eval(&state.q, 1.0));
    let mut qt = state.q_t.clone();
    qt.push(disc.eval(&state.q_t, 1.0));
    let mut dqs = dq.clone();
    dqs.push(disc.eval(&dq, 1.0));

    let len = s.len();
    let mut out = Reconstruction {
        t: state.t,
        y: Vec::with_capacity(len),
        x: Vec::with_capacity(len),
        density: Vec::with_capacity(len),
        velocity: Vec::with_capacity(len),
        boundary_radius: 0.0,
        mass: 0.0,
        position_gap: 0.0,
        density_gap: 0.0,
        velocity_gap: 0.0,
    };
    let h_over_nu = j.h / nu;
    for k in 0..len {
        let y = p.r0 * s[k].sqrt();
        let w = y * q[k];
        let w_t = y * qt[k];
        let wp = q[k] + 2.0 * s[k] * dqs[k];
        let ln_j = wp.ln_1p() + (nf - 1.0) * q[k].ln_1p();
        let x = j.theta * (y + w);
        let rho0 = p.rho0(y);
        let density = rho0 * (-ln_j).exp() * j.theta.powf(-nf);
        let velocity = j.theta_t * (y + w) + j.theta * w_t;
        out.position_gap = out.position_gap.max((j.h * y + j.theta * w).abs());
        let rel = nu.powf(-nf) * (-nf * h_over_nu.ln_1p() - ln_j).exp_m1().abs();
        out.density_gap = out.density_gap.max(rel);
        out.velocity_gap = out.velocity_gap.max((j.h_t * (y + w) + nu_t * w + j.theta * w_t).abs());
        if k + 1 < len {
            // density times the volume element θ^n J, integrated against dy
            let ratio = density * j.theta.powf(nf) * ln_j.exp() / rho0;
            out.mass += disc.weights[k] * ratio;
        }
        out.y.push(y);
        out.x.push(x);
        out.density.push(density);
        out.velocity.push(velocity);
    }
    // ∫ρ̄₀ dy = |S| (B̄R0²)^ι R0^n / 2 · ∫(1−s)^ι s^{n/2−1} ds
    out.mass *= p.sphere_area() * (p.b_bar * p.r0 * p.r0).powf(p.iota) * p.r0.powf(nf) * 0.5;
    out.boundary_radius = *out.x.last().unwrap();
    Ok(out)
}

/// `(|y + δ|² − |y|²)/R0²` as a jet in `δ`, with an exactly zero constant.
pub(crate) fn offset_s(y: &[f64; 3], dim: usize, r0sq: f64) -> Jet {
    let mut u = Jet::zero();
    for (a, ya) in y.iter().enumerate().take(dim) {
        let d = Jet::coordinate(a, 0.0);
        u = u + (d * d + d.scale(2.0 * ya)).scale(1.0 / r0sq);
    }
    u
}

/// Taylor jets of `∂_t^m ω` built from nodal `s`-derivatives.
pub struct RadialJets<'a> {
    disc: &'a RadialDisc,
    /// `[m][k]`: `d^k/ds^k ∂_t^m q` at the nodes.
    series: Vec<[Vec<f64>; 4]>,
}

impl<'a> RadialJets<'a> {
    /// `time_derivs[m] = ∂_t^m q`.
    pub fn new(disc: &'a RadialDisc, time_derivs: &[&[f64]]) -> Self {
        let series = time_derivs
            .iter()
            .map(|q| {
                let d1 = disc.s_derivative(q);
                let d2 = disc.s_derivative(&d1);
                let d3 = disc.s_derivative(&d2);
                [q.to_vec(), d1, d2, d3]
            })
            .collect();
        Self { disc, series }
    }
}

impl JetSource for RadialJets<'_> {
    fn max_time_order(&self) -> usize {
        self.series.len() - 1
    }

    fn time_jet(&self, m: usize, y: [f64; 3]) -> VectorJet {
        let r0sq = self.disc.params.r0 * self.disc.params.r0;
        let dim = self.disc.params.n;
        let s0 = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]) / r0sq;
        let fact = [1.0, 1.0, 2.0, 6.0];
        let coeffs: Vec<f64> = (0..4).map(|k| self.disc.eval(&self.series[m][k], s0) / fact[k]).collect();
        let coords: Vec<Jet> = (0..dim).map(|c| Jet::coordinate(c, y[c])).collect();
        let u = offset_s(&y, dim, r0sq);
        let qj = Jet::compose(&coeffs, &u);
        let mut out = [Jet::zero(); 3];
        for (c, yc) in coords.iter().enumerate() {
            out[c] = *yc * qj;
        }
        out
    }
}

/// Seed profiles `w0(r)` for perturbed runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedShape {
    /// `r (R0 − r) / R0²`
    Bump,
    /// `r (R0² − r²) / R0³`, smooth at the center.
    SmoothBump,
    /// `r / R0`, a uniform dilation.
    Dilation,
}

impl SeedShape {
    pub fn profile(self, r0: f64, amplitude: f64) -> impl Fn(f64) -> f64 {
        move |r: f64| {
            amplitude
                * match self {
                    SeedShape::Bump => r * (r0 - r) / (r0 * r0),
                    SeedShape::SmoothBump => r * (r0 * r0 - r * r) / (r0 * r0 * r0),
                    SeedShape::Dilation => r / r0,
                }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub t: f64,
    pub sup_w: f64,
    pub boundary_radius: f64,
    pub mass: f64,
    pub position_gap: f64,
    pub density_gap: f64,
    pub velocity_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub t: f64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct EvolveOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Output times, increasing; the first may equal the initial time.
    pub outputs: Vec<f64>,
    /// Radial nodes of the energy quadrature; `None` skips energies.
    pub energy_nodes: Option<usize>,
    pub indices: Vec<EnergyIndex>,
    /// Keep a checkpoint every this many outputs; 0 keeps none.
    pub checkpoint_every: usize,
}

impl EvolveOptions {
    pub fn new(outputs: Vec<f64>) -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-14,
            outputs,
            energy_nodes: None,
            indices: truncated_index_set(),
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: PhysParams,
    pub records: Vec<OutputRecord>,
    pub energies: Option<EnergyReport>,
    pub checkpoints: Vec<Checkpoint>,
    pub final_state: RadialState,
    pub failure: Option<Failure>,
    pub accepted: usize,
    pub rejected: usize,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }
}

/// `t = 0` followed by `per_decade` log-spaced times per decade from 1e-2.
pub fn output_times(t_end: f64, per_decade: usize) -> Vec<f64> {
    let lo = 1e-2f64.min(t_end);
    let count = (((t_end / lo).log10() * per_decade as f64).ceil() as usize).max(1) + 1;
    let mut out = vec![0.0];
    out.extend(crate::diagnostics::log_times(lo, t_end, count));
    out
}

fn record(
    disc: &RadialDisc,
    solver: &RadialSolver,
    grid: Option<&WeightedGrid>,
    indices: &[EnergyIndex],
) -> Result<(OutputRecord, Option<Vec<f64>>)> {
    let state = &solver.state;
    let rec = reconstruct_physical(disc, state, solver.path)?;
    let energies = match grid {
        Some(g) => {
            let (q_tt, q_ttt) = time_derivatives(disc, state, solver.path)?;
            let jets = RadialJets::new(disc, &[&state.q, &state.q_t, &q_tt, &q_ttt]);
            Some(energy_components(g, &jets, &disc.params, state.t, indices, disc.execution)?)
        }
        None => None,
    };
    Ok((
        OutputRecord {
            t: state.t,
            sup_w: state.sup_w(disc),
            boundary_radius: rec.boundary_radius,
            mass: rec.mass,
            position_gap: rec.position_gap,
            density_gap: rec.density_gap,
            velocity_gap: rec.velocity_gap,
        },
        energies,
    ))
}

/// Integrate through the output schedule. Mid-run failures end the
/// trajectory early with `failure` set; everything recorded so far is kept.
pub fn evolve(disc: &RadialDisc, path: &CorrectionPath, initial: RadialState, opts: &EvolveOptions) -> Result<Trajectory> {
    let solver = RadialSolver::new(disc, path, initial, opts.rtol, opts.atol)?;
    continue_run(solver, opts, 0)
}

/// Continue a solver through the outputs after its current time; `first_index`
/// numbers the checkpoints.
pub fn continue_run(mut solver: RadialSolver, opts: &EvolveOptions, first_index: usize) -> Result<Trajectory> {
    let disc = solver.disc;
    if opts.outputs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("outputs", "times must increase"));
    }
    if let Some(&last) = opts.outputs.last() {
        if last > solver.path.t_end() {
            return Err(invalid(
                "outputs",
                format!("{last} beyond the correction path end {}", solver.path.t_end()),
            ));
        }
    }
    let grid = match opts.energy_nodes {
        Some(k) => Some(WeightedGrid::for_energies(&disc.params, k, AngularRule::Isotropic)?),
        None => None,
    };
    let mut traj = Trajectory {
        params: disc.params,
        records: Vec::new(),
        energies: grid.as_ref().map(|_| EnergyReport::new(opts.indices.clone())),
        checkpoints: Vec::new(),
        final_state: solver.state.clone(),
        failure: None,
        accepted: 0,
        rejected: 0,
    };
    let mut index = first_index;
    let t_start = solver.state.t;
    for &t_out in opts.outputs.iter().filter(|&&t| t >= t_start) {
        let step = solver
            .advance_to(t_out)
            .and_then(|_| record(disc, &solver, grid.as_ref(), &opts.indices));
        match step {
            Ok((rec, energies)) => {
                traj.records.push(rec);
                if let (Some(report), Some(row)) = (traj.energies.as_mut(), energies) {
                    report.push(t_out, row);
                }
                if opts.checkpoint_every > 0 && index.is_multiple_of(opts.checkpoint_every) {
                    traj.checkpoints.push(solver.checkpoint(index));
                }
                index += 1;
            }
            Err(e) => {
                traj.failure = Some(Failure {
                    t: solver.state.t,
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    traj.final_state = solver.state.clone();
    (traj.accepted, traj.rejected) = solver.steps();
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub samples: usize,
    /// Largest relative discrepancy at the finer grid.
    pub max_discrepancy: f64,
    pub coarse: f64,
    pub fine: f64,
    /// `coarse / fine`; 16 for the fourth-order stencils.
    pub ratio: f64,
}

/// Random smooth `q(s) = ε Σ c_k s^k` with its first two derivatives.
fn random_profile(rng: &mut ChaCha8Rng, eps: f64) -> [f64; 4] {
    let mut c = [0.0; 4];
    for v in c.iter_mut() {
        *v = eps * rng.gen_range(-1.0..1.0);
    }
    c
}

fn poly(c: &[f64; 4], s: f64) -> (f64, f64, f64) {
    let q = c[0] + s * (c[1] + s * (c[2] + s * c[3]));
    let q_s = c[1] + s * (2.0 * c[2] + s * 3.0 * c[3]);
    let q_ss = 2.0 * c[2] + 6.0 * s * c[3];
    (q, q_s, q_ss)
}

/// `Σ_k ∂_k(σ₊^{ι+1}(A^k_i J^{1−γ} − δ^k_i))` at every node of a deformation,
/// scaled by `sign`. Dividing by `σ^ι` gives the pressure force per unit
/// initial density.
pub fn cartesian_pressure(params: &PhysParams, field: &DeformationField, sign: f64) -> Vec<[f64; 3]> {
    let grid = &field.grid;
    let dim = params.n;
    let mut force = vec![[0.0; 3]; grid.len()];
    for i in 0..dim {
        for k in 0..dim {
            let tk: Vec<f64> = (0..grid.len())
                .map(|node| {
                    let y = grid.coord(node);
                    let sig = params.sigma((y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt()).max(0.0);
                    let a = field.inverse[node][(k, i)] * field.jacobian[node].powf(1.0 - params.gamma);
                    let delta = if k == i { 1.0 } else { 0.0 };
                    sig.powf(params.iota + 1.0) * sign * (a - delta)
                })
                .collect();
            for (f, d) in force.iter_mut().zip(derivative(grid, &tk, k)) {
                f[i] += d;
            }
        }
    }
    force
}

/// Pressure force from [`cartesian_pressure`] compared along the first axis
/// with the radial strong form.
fn cartesian_discrepancy(params: &PhysParams, c: &[f64; 4], points: usize, sign: f64) -> Result<f64> {
    let grid = TensorGrid::new(params.n, points, 0.75 * params.r0)?;
    let r0sq = params.r0 * params.r0;
    let omega = grid.sample_vector(|y| {
        let s = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]) / r0sq;
        let q = poly(c, s).0;
        [y[0] * q, y[1] * q, y[2] * q]
    });
    let field = build_deformation(&grid, omega)?;
    let dim = params.n;
    let force: Vec<f64> = cartesian_pressure(params, &field, sign).iter().map(|f| f[0]).collect();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for node in 0..grid.len() {
        let mi = grid.multi_index(node);
        let y = grid.coord(node);
        let mid = (points - 1) / 2;
        let off_axis = mi[1] != mid || (dim == 3 && mi[2] != mid);
        if off_axis || y[0] < 0.1 * params.r0 || y[0] > 0.6 * params.r0 {
            continue;
        }
        let r = y[0];
        let (q, q_s, q_ss) = poly(c, r * r / r0sq);
        let strong = strong_pressure(params, r, q, q_s, q_ss);
        let cart = force[node] / params.sigma(r).powf(params.iota);
        worst = worst.max((cart - strong).abs());
        scale = scale.max(strong.abs());
    }
    Ok(if scale == 0.0 { worst } else { worst / scale })
}

/// Compare the radial reduction of the pressure term with a direct
/// Cartesian evaluation through the kinematics kernels, at two resolutions.
pub fn radial_oracle_check(params: &PhysParams, n_samples: usize, seed: u64) -> Result<OracleReport> {
    oracle_with_sign(params, n_samples, seed, 1.0)
}

/// Same check with the Cartesian pressure multiplied by `sign`; `-1`
/// reproduces a sign error and must fail.
pub fn oracle_with_sign(params: &PhysParams, n_samples: usize, seed: u64, sign: f64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (coarse_pts, fine_pts) = if params.n == 2 { (41, 81) } else { (25, 49) };
    let mut coarse: f64 = 0.0;
    let mut fine: f64 = 0.0;
    for _ in 0..n_samples {
        let c = random_profile(&mut rng, 0.02);
        coarse = coarse.max(cartesian_discrepancy(params, &c, coarse_pts, sign)?);
        fine = fine.max(cartesian_discrepancy(params, &c, fine_pts, sign)?);
    }
    Ok(OracleReport {
        samples: n_samples,
        max_discrepancy: fine,
        coarse,
        fine,
        ratio: if fine > 0.0 { coarse / fine } else { f64::INFINITY },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{solve_correction, DEFAULT_ATOL, DEFAULT_RTOL};
    use crate::params::derive_constants;
    use approx::assert_relative_eq;

    fn p3() -> PhysParams {
        derive_constants(3, 0.0, 2.0, 1.0).unwrap()
    }

    #[test]
    fn zero_state_has_zero_acceleration() {
        let p = p3();
        let disc = RadialDisc::new(&p, 24).unwrap();
        let path = solve_correction(&p, 10.0, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        let w = radial_rhs(&disc, &RadialState::zero(&disc), &path).unwrap();
        assert!(w.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn weak_form_matches_strong_form() {
        let p = p3();
        let disc = RadialDisc::new(&p, 40).unwrap();
        let c = [0.02, -0.03, 0.01, 0.015];
        let q: Vec<f64> = disc.s.iter().map(|&s| poly(&c, s).0).collect();
        let pi = disc.pressure(&q, 0.0, false).unwrap();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for j in 0..disc.len() {
            let (v, vs, vss) = poly(&c, disc.s[j]);
            let strong = strong_pressure(&p, disc.r[j], v, vs, vss) / disc.r[j];
            worst = worst.max((pi[j] - strong).abs());
            scale = scale.max(strong.abs());
        }
        assert!(worst / scale < 1e-6, "{}", worst / scale);
    }

    #[test]
    fn dilation_pressure_is_restoring_and_compression_pushes_out() {
        let p = p3();
        let disc = RadialDisc::new(&p, 16).unwrap();
        let dil = vec![1e-3; disc.len()];
        let pi = disc.pressure(&dil, 0.0, false).unwrap();
        assert!(pi.iter().all(|v| *v > 0.0));
        // exact for a constant q: Π = −2B̄(ι+1) a
        let a = ((-p.gamma - (p.gamma - 1.0) * 2.0) * 1e-3f64.ln_1p()).exp_m1();
        for v in &pi {
            assert_relative_eq!(*v, -2.0 * p.b_bar * (p.iota + 1.0) * a, max_relative = 1e-8);
        }
        let path = solve_correction(&p, 10.0, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        let state = RadialState::from_profile(&disc, |r| -1e-3 * r * (1.0 + 0.2 * r * r));
        let w_tt = radial_rhs(&disc, &state, &path).unwrap();
        assert!(w_tt.iter().all(|v| *v > 0.0), "{w_tt:?}");
    }

    #[test]
    fn nonlinear_remainder_is_quadratic() {
        let p = p3();
        let disc = RadialDisc::new(&p, 20).unwrap();
        let phi: Vec<f64> = disc.s.iter().map(|s| 1.0 - 0.5 * s + 0.3 * s * s).collect();
        let rem = |eps: f64| {
            let q: Vec<f64> = phi.iter().map(|v| eps * v).collect();
            let full = disc.pressure(&q, 0.0, false).unwrap();
            let lin = disc.pressure(&q, 0.0, true).unwrap();
            full.iter().zip(&lin).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let ratio = rem(1e-3) / rem(5e-4);
        assert!((ratio - 4.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn degenerate_state_is_reported() {
        let p = p3();
        let disc = RadialDisc::new(&p, 12).unwrap();
        let q = vec![-1.5; disc.len()];
        assert!(matches!(disc.pressure(&q, 2.0, false), Err(Error::DegenerateRadial { t, .. }) if t == 2.0));
    }

    #[test]
    fn third_derivative_matches_differences() {
        let p = p3();
        let disc = RadialDisc::new(&p, 16).unwrap();
        let path = solve_correction(&p, 20.0, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        let init = RadialState::from_profile(&disc, SeedShape::SmoothBump.profile(p.r0, 1e-2));
        let mut solver = RadialSolver::new(&disc, &path, init, 1e-12, 1e-16).unwrap();
        solver.advance_to(1.0).unwrap();
        let (_, q_ttt) = time_derivatives(&disc, &solver.state, &path).unwrap();
        let dt = 1e-3;
        let at = |t: f64| {
            let mut s = RadialSolver::new(&disc, &path, solver.state.clone(), 1e-12, 1e-16).unwrap();
            s.advance_to(t).unwrap();
            time_derivatives(&disc, &s.state, &path).unwrap().0
        };
        let (a, b) = (at(1.0 + dt), at(1.0 + 2.0 * dt));
        let (q_tt0, _) = time_derivatives(&disc, &solver.state, &path).unwrap();
        let scale = q_ttt.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for j in 0..disc.len() {
            let fd = (-3.0 * q_tt0[j] + 4.0 * a[j] - b[j]) / (2.0 * dt);
            assert!((fd - q_ttt[j]).abs() < 1e-4 * scale, "{j}: {fd} vs {}", q_ttt[j]);
        }
    }

    #[test]
    fn zero_run_stays_zero_and_reconstructs_background() {
        let p = p3();
        let disc = RadialDisc::new(&p, 32).unwrap();
        let path = solve_correction(&p, 100.0, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        let traj = evolve(&disc, &path, RadialState::zero(&disc), &EvolveOptions::new(output_times(100.0, 10))).unwrap();
        assert!(traj.completed());
        assert!(traj.records.iter().all(|r| r.sup_w == 0.0));
        let rec = reconstruct_physical(&disc, &traj.final_state, &path).unwrap();
        let j = path.eval(100.0).unwrap();
        assert_relative_eq!(rec.boundary_radius, j.theta * p.r0, max_relative = 1e-14);
        assert_relative_eq!(rec.position_gap, j.h.abs() * p.r0, max_relative = 1e-12);
        assert_relative_eq!(rec.mass, 1.0, max_relative = 1e-10);
        for k in 0..disc.len() {
            assert_relative_eq!(rec.density[k], p.rho0(rec.y[k]) * j.theta.powi(-3), max_relative = 1e-13);
            assert_relative_eq!(rec.velocity[k], j.theta_t * rec.y[k], max_relative = 1e-13);
        }
    }

    #[test]
    fn restart_bit_matches() {
        let p = p3();
        let disc = RadialDisc::new(&p, 16).unwrap();
        let path = solve_correction(&p, 50.0, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        let init = RadialState::from_profile(&disc, SeedShape::Bump.profile(p.r0, 1e-3));
        let mut opts = EvolveOptions::new(output_times(50.0, 10));
        opts.checkpoint_every = 5;
        let full = evolve(&disc, &path, init, &opts).unwrap();
        let cp = &full.checkpoints[2];
        let json = serde_json::to_string(cp).unwrap();
        let cp: Checkpoint = serde_json::from_str(&json).unwrap();
        let resumed = RadialSolver::resume(&disc, &path, &cp).unwrap();
        let rest = continue_run(resumed, &opts, cp.index).unwrap();
        assert_eq!(rest.final_state, full.final_state);
        assert_eq!(rest.records.last(), full.records.last());
    }

    #[test]
    fn oracle_agrees_with_cartesian_pressure() {
        let p = derive_constants(2, 0.0, 2.0, 1.0).unwrap();
        let rep = radial_oracle_check(&p, 2, 11).unwrap();
        assert!(rep.max_discrepancy < 1e-4, "{rep:?}");
        assert!((rep.ratio - 16.0).abs() < 0.3 * 16.0, "{rep:?}");
        let bad = oracle_with_sign(&p, 1, 11, -1.0).unwrap();
        assert!(bad.max_discrepancy > 0.5);
    }
}
