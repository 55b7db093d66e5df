//! Linearized evolution of one angular mode around `ω = 0`.
//!
//! At linear order the force is a pure gradient, `∇(κ y·ω − γσ div ω)`, so
//! the field splits into a potential part `∇(P(s) G)` that feels pressure
//! and a rotational part that is only damped:
//!
//! * `n = 2`: `ω = ∇(P G) + ∇^⊥(Q H)` with `G = Im z^ℓ`, `H = Re z^ℓ`;
//!   the rotational part feeds `κℓQ G` back into the potential.
//! * `n = 3`: `ω = ∇(P S_ℓ) + Q ∇S_ℓ × y` with the zonal solid harmonic
//!   `S_ℓ`; the toroidal part is orthogonal to `y` and does not couple.
//!
//! With `c = (1+t)^{−λ} + 2θ_t/θ` the rotational profile obeys
//! `Q_tt = −c Q_t` node by node, hence the curl of `∂_tω` decays exactly like
//! `θ^{−2} exp(−∫(1+τ)^{−λ})`.

use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::integrate::Rk4;
use crate::jet::{Jet, VectorJet, JET_DEGREE};
use crate::ode::CorrectionPath;
use crate::params::PhysParams;
use crate::quadrature::{matvec, Barycentric, GaussJacobi};
use crate::radial::{offset_s, Coefficients};
use crate::taylor::{Scalar, Taylor2};
use crate::weighted::{energy_components, weighted_norm, AngularRule, EnergyIndex, EnergyReport, JetSource, WeightedGrid};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Largest supported wavenumber.
pub const MAX_MODE: usize = 8;
const RADIAL_ENERGY_NODES: usize = 16;

/// Radial collocation for one wavenumber.
#[derive(Debug, Clone)]
pub struct ModeDisc {
    pub params: PhysParams,
    pub ell: usize,
    pub s: Vec<f64>,
    pub weights: Vec<f64>,
    diff: Vec<f64>,
    interp: Barycentric,
    /// Largest eigenvalue of the potential operator.
    pub lambda_max: f64,
}

fn dmul(m: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    matvec(m, x, &mut out);
    out
}

impl ModeDisc {
    pub fn new(params: &PhysParams, ell: usize, nodes: usize) -> Result<Self> {
        if ell == 0 || ell > MAX_MODE {
            return Err(invalid("ell", format!("wavenumber must lie in 1..={MAX_MODE}, got {ell}")));
        }
        if nodes < 4 {
            return Err(invalid("nodes", format!("need at least 4, got {nodes}")));
        }
        let beta = 0.5 * params.n as f64 + ell as f64 - 1.0;
        let rule = GaussJacobi::new(nodes, params.iota - 1.0, beta)?;
        let (s, weights) = rule.mapped(0.0, 1.0);
        let interp = Barycentric::new(&s);
        let diff = interp.differentiation_matrix();
        let mut disc = Self {
            params: *params,
            ell,
            s,
            weights,
            diff,
            interp,
            lambda_max: 0.0,
        };
        disc.lambda_max = disc.largest_eigenvalue();
        Ok(disc)
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Coupling of the rotational profile into the potential equation.
    fn coupling(&self) -> f64 {
        if self.params.n == 2 {
            self.params.kappa * self.ell as f64
        } else {
            0.0
        }
    }

    /// `κℓP − γB̄ w^{−1}(4 w (1−s) s P')'` with `w = (1−s)^{ι−1} s^{n/2+ℓ−1}`,
    /// in weak form.
    pub fn stiffness<S: Scalar>(&self, p: &[S]) -> Vec<S> {
        let n = self.len();
        let g = 4.0 * self.params.gamma * self.params.b_bar;
        let mut flux = vec![S::cst(0.0); n];
        for q in 0..n {
            let mut dp = S::cst(0.0);
            for (a, v) in self.diff[q * n..(q + 1) * n].iter().zip(p) {
                dp = dp + *v * *a;
            }
            flux[q] = dp * (self.weights[q] * (1.0 - self.s[q]) * self.s[q]);
        }
        let kl = self.params.kappa * self.ell as f64;
        (0..n)
            .map(|j| {
                let mut acc = S::cst(0.0);
                for (q, f) in flux.iter().enumerate() {
                    acc = acc + *f * self.diff[q * n + j];
                }
                p[j] * kl + acc * (g / self.weights[j])
            })
            .collect()
    }

    /// `(P_tt, Q_tt)` for the state `(P, Q, P_t, Q_t)`.
    pub fn accel<S: Scalar>(&self, p: &[S], q: &[S], pt: &[S], qt: &[S], c: &Coefficients<S>) -> (Vec<S>, Vec<S>) {
        let k = self.stiffness(p);
        let cp = self.coupling();
        let ptt = (0..self.len())
            .map(|j| -(c.damping * pt[j]) - c.stiffness * (k[j] + q[j] * cp))
            .collect();
        let qtt = qt.iter().map(|v| -(c.damping * *v)).collect();
        (ptt, qtt)
    }

    fn largest_eigenvalue(&self) -> f64 {
        let n = self.len();
        let dot = |a: &[f64], b: &[f64]| -> f64 { (0..n).map(|j| self.weights[j] * a[j] * b[j]).sum() };
        let mut x: Vec<f64> = (0..n).map(|j| 1.0 + 0.41 * (j as f64).cos()).collect();
        let mut est = 0.0;
        for _ in 0..400 {
            let y = self.stiffness(&x);
            est = dot(&x, &y) / dot(&x, &x);
            let norm = dot(&y, &y).sqrt();
            if norm == 0.0 {
                break;
            }
            x = y.iter().map(|v| v / norm).collect();
        }
        est.abs() * 1.05
    }

    /// Stable RK4 step bound; `θ ≥ 1` makes the `t = 0` value global.
    pub fn step_limit(&self) -> f64 {
        2.0 / self.lambda_max.sqrt()
    }

    pub fn eval(&self, v: &[f64], s: f64) -> f64 {
        self.interp.eval(s, v)
    }

    /// `[v, v', …, v''''/4!]` at `s`.
    fn series(&self, derivs: &[Vec<f64>; 5], s: f64) -> [f64; 5] {
        let fact = [1.0, 1.0, 2.0, 6.0, 24.0];
        std::array::from_fn(|k| self.eval(&derivs[k], s) / fact[k])
    }

    fn derivatives(&self, v: &[f64]) -> [Vec<f64>; 5] {
        let d1 = dmul(&self.diff, v);
        let d2 = dmul(&self.diff, &d1);
        let d3 = dmul(&self.diff, &d2);
        let d4 = dmul(&self.diff, &d3);
        [v.to_vec(), d1, d2, d3, d4]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    pub t: f64,
    pub ell: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub p_t: Vec<f64>,
    pub q_t: Vec<f64>,
}

impl ModeState {
    pub fn zero(disc: &ModeDisc) -> Self {
        let z = vec![0.0; disc.len()];
        Self {
            t: 0.0,
            ell: disc.ell,
            p: z.clone(),
            q: z.clone(),
            p_t: z.clone(),
            q_t: z,
        }
    }

    /// Profiles sampled from functions of `s`.
    pub fn from_profiles(
        disc: &ModeDisc,
        p: impl Fn(f64) -> f64,
        q: impl Fn(f64) -> f64,
        p_t: impl Fn(f64) -> f64,
        q_t: impl Fn(f64) -> f64,
    ) -> Self {
        Self {
            t: 0.0,
            ell: disc.ell,
            p: disc.s.iter().map(|&s| p(s)).collect(),
            q: disc.s.iter().map(|&s| q(s)).collect(),
            p_t: disc.s.iter().map(|&s| p_t(s)).collect(),
            q_t: disc.s.iter().map(|&s| q_t(s)).collect(),
        }
    }

    pub fn check(&self, disc: &ModeDisc) -> Result<()> {
        if self.ell != disc.ell {
            return Err(invalid(
                "ell",
                format!("state has ℓ = {}, discretization ℓ = {}", self.ell, disc.ell),
            ));
        }
        for v in [&self.p, &self.q, &self.p_t, &self.q_t] {
            if v.len() != disc.len() {
                return Err(Error::DimensionMismatch {
                    expected: disc.len(),
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid("state", "non-finite profile values"));
            }
        }
        Ok(())
    }

    fn pack(&self) -> Vec<f64> {
        [&self.p, &self.q, &self.p_t, &self.q_t].into_iter().flatten().copied().collect()
    }

    fn unpack(&mut self, y: &[f64]) {
        let n = self.p.len();
        self.p.copy_from_slice(&y[..n]);
        self.q.copy_from_slice(&y[n..2 * n]);
        self.p_t.copy_from_slice(&y[2 * n..3 * n]);
        self.q_t.copy_from_slice(&y[3 * n..]);
    }
}

/// Second and third time derivatives of both profiles.
pub fn mode_time_derivatives(disc: &ModeDisc, st: &ModeState, path: &CorrectionPath) -> Result<[Vec<f64>; 4]> {
    let j = path.eval(st.t)?;
    let (ptt, qtt) = disc.accel(&st.p, &st.q, &st.p_t, &st.q_t, &Coefficients::at(&disc.params, &j));
    let jet = |x: &[f64], v: &[f64], a: &[f64]| -> Vec<Taylor2> { (0..x.len()).map(|k| Taylor2::new(x[k], v[k], 0.5 * a[k])).collect() };
    let vel = |v: &[f64], a: &[f64]| -> Vec<Taylor2> { (0..v.len()).map(|k| Taylor2::new(v[k], a[k], 0.0)).collect() };
    let (pa, qa) = disc.accel(
        &jet(&st.p, &st.p_t, &ptt),
        &jet(&st.q, &st.q_t, &qtt),
        &vel(&st.p_t, &ptt),
        &vel(&st.q_t, &qtt),
        &Coefficients::jet(&disc.params, &j),
    );
    Ok([ptt, qtt, pa.iter().map(|v| v.d1()).collect(), qa.iter().map(|v| v.d1()).collect()])
}

/// `Re z^ℓ`, `Im z^ℓ` (n = 2) or the zonal harmonic twice (n = 3) as jets.
fn harmonics(dim: usize, ell: usize, y: [f64; 3]) -> (Jet, Jet) {
    let x: Vec<Jet> = (0..3).map(|a| Jet::coordinate(a, y[a])).collect();
    if dim == 2 {
        let (mut re, mut im) = (Jet::constant(1.0), Jet::zero());
        for _ in 0..ell {
            (re, im) = (re * x[0] - im * x[1], re * x[1] + im * x[0]);
        }
        (re, im)
    } else {
        // (k+1) S_{k+1} = (2k+1) z S_k − k r² S_{k−1}
        let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        let (mut prev, mut cur) = (Jet::constant(1.0), x[2]);
        for k in 1..ell {
            let next = (x[2] * cur).scale((2 * k + 1) as f64) - (r2 * prev).scale(k as f64);
            prev = cur;
            cur = next.scale(1.0 / (k + 1) as f64);
        }
        (cur, cur)
    }
}

/// Derivative of an exact polynomial jet; no order is lost while the
/// polynomial degree fits in the jet.
fn poly_derivative(f: &Jet, axis: usize, degree: usize) -> Jet {
    let mut d = f.derivative(axis);
    if degree <= JET_DEGREE {
        d.valid = JET_DEGREE;
    }
    d
}

/// Jets of `∂_t^m ω` for one mode.
pub struct ModeJets<'a> {
    disc: &'a ModeDisc,
    /// `[m]`: s-derivatives of `∂_t^m P` and `∂_t^m Q`.
    p: Vec<[Vec<f64>; 5]>,
    q: Vec<[Vec<f64>; 5]>,
}

impl<'a> ModeJets<'a> {
    /// `profiles[m] = (∂_t^m P, ∂_t^m Q)`.
    pub fn new(disc: &'a ModeDisc, profiles: &[(&[f64], &[f64])]) -> Self {
        Self {
            disc,
            p: profiles.iter().map(|(p, _)| disc.derivatives(p)).collect(),
            q: profiles.iter().map(|(_, q)| disc.derivatives(q)).collect(),
        }
    }

    fn radial_jet(&self, d: &[Vec<f64>; 5], y: [f64; 3]) -> Jet {
        let r0sq = self.disc.params.r0 * self.disc.params.r0;
        let s0 = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]) / r0sq;
        let u = offset_s(&y, self.disc.params.n, r0sq);
        Jet::compose(&self.disc.series(d, s0), &u)
    }
}

impl JetSource for ModeJets<'_> {
    fn max_time_order(&self) -> usize {
        self.p.len() - 1
    }

    fn time_jet(&self, m: usize, y: [f64; 3]) -> VectorJet {
        let dim = self.disc.params.n;
        let ell = self.disc.ell;
        let (h, g) = harmonics(dim, ell, y);
        let phi = self.radial_jet(&self.p[m], y) * g;
        let qj = self.radial_jet(&self.q[m], y);
        let mut out = [Jet::zero(); 3];
        for (a, o) in out.iter_mut().enumerate().take(dim) {
            *o = phi.derivative(a);
        }
        if dim == 2 {
            let psi = qj * h;
            out[0] = out[0] - psi.derivative(1);
            out[1] = out[1] + psi.derivative(0);
        } else {
            let grad: Vec<Jet> = (0..3).map(|a| poly_derivative(&h, a, ell)).collect();
            let x: Vec<Jet> = (0..3).map(|a| Jet::coordinate(a, y[a])).collect();
            for a in 0..3 {
                let (b, c) = ((a + 1) % 3, (a + 2) % 3);
                out[a] = out[a] + qj * (grad[b] * x[c] - grad[c] * x[b]);
            }
        }
        out
    }
}

/// Curl of a vector jet at its base point: one component for `n = 2`.
fn curl_value(f: &VectorJet, dim: usize) -> Vec<f64> {
    let d = |c: usize, a: usize| f[c].derivative(a).value();
    if dim == 2 {
        vec![d(1, 0) - d(0, 1)]
    } else {
        vec![d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)]
    }
}

/// Quadrature used for curl norms and mode energies.
pub fn mode_grid(params: &PhysParams, ell: usize) -> Result<WeightedGrid> {
    let rule = if params.n == 2 {
        AngularRule::Circle(4 * ell + 12)
    } else {
        AngularRule::Zonal(2 * ell + 8)
    };
    WeightedGrid::for_energies(params, RADIAL_ENERGY_NODES + ell, rule)
}

/// `(∫σ^ι |curl ∂_tω|²)^{1/2}`.
pub fn curl_norm(disc: &ModeDisc, grid: &WeightedGrid, st: &ModeState) -> Result<f64> {
    let z = vec![0.0; disc.len()];
    let jets = ModeJets::new(disc, &[(&z, &z), (&st.p_t, &st.q_t)]);
    let dim = disc.params.n;
    let field: Vec<f64> = (0..grid.len())
        .flat_map(|k| curl_value(&jets.time_jet(1, grid.point(k)), dim))
        .collect();
    Ok(weighted_norm(grid, &field, disc.params.iota)?.sqrt())
}

/// `θ^{−2} exp(−∫₀ᵗ (1+τ)^{−λ} dτ)`.
pub fn curl_envelope(path: &CorrectionPath, t: f64) -> Result<f64> {
    let lambda = path.params.lambda;
    let integral = if (lambda - 1.0).abs() < 1e-12 {
        t.ln_1p()
    } else {
        ((1.0 + t).powf(1.0 - lambda) - 1.0) / (1.0 - lambda)
    };
    Ok(path.theta(t)?.powi(-2) * (-integral).exp())
}

#[derive(Debug, Clone)]
pub struct ModeOptions {
    pub t_end: f64,
    /// Requested step; shortened to the stability bound and to divide `t_end`.
    pub dt: f64,
    /// Record every this many steps.
    pub record_every: usize,
    /// Energy indices evaluated at each record; empty skips energies.
    pub indices: Vec<EnergyIndex>,
    pub execution: Execution,
}

impl ModeOptions {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self {
            t_end,
            dt,
            record_every: 1,
            indices: Vec::new(),
            execution: Execution::available(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRecord {
    pub t: f64,
    pub curl_norm: f64,
    pub envelope: f64,
    /// `|curl(t)/curl(0) − envelope| / envelope`; NaN when the initial curl
    /// vanishes.
    pub deviation: f64,
}

#[derive(Debug, Clone)]
pub struct ModeTrajectory {
    pub ell: usize,
    pub dt: f64,
    pub records: Vec<ModeRecord>,
    pub energies: Option<EnergyReport>,
    pub final_state: ModeState,
}

impl ModeTrajectory {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "curl_norm", "envelope", "relative_deviation"])?;
        for r in &self.records {
            w.write_record([r.t, r.curl_norm, r.envelope, r.deviation].map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mode_energies(
    disc: &ModeDisc,
    grid: &WeightedGrid,
    st: &ModeState,
    path: &CorrectionPath,
    indices: &[EnergyIndex],
    exec: Execution,
) -> Result<Vec<f64>> {
    let [ptt, qtt, pttt, qttt] = mode_time_derivatives(disc, st, path)?;
    let jets = ModeJets::new(disc, &[(&st.p, &st.q), (&st.p_t, &st.q_t), (&ptt, &qtt), (&pttt, &qttt)]);
    energy_components(grid, &jets, &disc.params, st.t, indices, exec)
}

/// Integrate one mode with fixed-step RK4.
pub fn evolve_mode(disc: &ModeDisc, path: &CorrectionPath, initial: ModeState, opts: &ModeOptions) -> Result<ModeTrajectory> {
    initial.check(disc)?;
    if !(opts.t_end > initial.t && opts.dt > 0.0) {
        return Err(invalid("t_end", "must exceed the initial time with a positive step"));
    }
    if opts.t_end > path.t_end() {
        return Err(invalid(
            "t_end",
            format!("{} beyond the correction path end {}", opts.t_end, path.t_end()),
        ));
    }
    let span = opts.t_end - initial.t;
    let steps = (span / opts.dt.min(disc.step_limit())).ceil() as usize;
    let dt = span / steps as f64;
    let grid = mode_grid(&disc.params, disc.ell)?;
    let curl0 = curl_norm(disc, &grid, &initial)?;
    let n = disc.len();
    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let j = path.eval(t)?;
        let c = Coefficients::at(&disc.params, &j);
        let (ptt, qtt) = disc.accel(&y[..n], &y[n..2 * n], &y[2 * n..3 * n], &y[3 * n..], &c);
        dy[..2 * n].copy_from_slice(&y[2 * n..]);
        dy[2 * n..3 * n].copy_from_slice(&ptt);
        dy[3 * n..].copy_from_slice(&qtt);
        Ok(())
    };
    let mut state = initial.clone();
    let mut y = state.pack();
    let mut rk = Rk4::new(y.len());
    let mut records = Vec::new();
    let mut energies = (!opts.indices.is_empty()).then(|| EnergyReport::new(opts.indices.clone()));
    let every = opts.record_every.max(1);
    for k in 0..=steps {
        if k > 0 {
            rk.step(&mut rhs, initial.t + (k - 1) as f64 * dt, &mut y, dt)?;
            state.t = initial.t + k as f64 * dt;
            state.unpack(&y);
        }
        if k % every != 0 && k != steps {
            continue;
        }
        let norm = curl_norm(disc, &grid, &state)?;
        let envelope = curl_envelope(path, state.t)? / curl_envelope(path, initial.t)?;
        let deviation = if curl0 > 0.0 {
            (norm / curl0 - envelope).abs() / envelope
        } else {
            f64::NAN
        };
        records.push(ModeRecord {
            t: state.t,
            curl_norm: norm,
            envelope,
            deviation,
        });
        if let Some(report) = energies.as_mut() {
            report.push(state.t, mode_energies(disc, &grid, &state, path, &opts.indices, opts.execution)?);
        }
    }
    Ok(ModeTrajectory {
        ell: disc.ell,
        dt,
        records,
        energies,
        final_state: state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub max_deviation: f64,
    pub worst_time: f64,
    pub samples: usize,
}

/// Largest relative deviation of the normalized curl from its exact envelope.
pub fn curl_decay_fit(traj: &ModeTrajectory) -> Result<EnvelopeFit> {
    let first = traj
        .records
        .first()
        .ok_or_else(|| Error::DegenerateFit("empty mode trajectory".into()))?;
    if !(first.curl_norm > 0.0) {
        return Err(Error::DegenerateFit("initial curl of the velocity vanishes".into()));
    }
    let (worst_time, max_deviation) =
        traj.records
            .iter()
            .map(|r| (r.t, r.deviation))
            .fold((first.t, 0.0), |acc, r| if r.1 > acc.1 { r } else { acc });
    Ok(EnvelopeFit {
        max_deviation,
        worst_time,
        samples: traj.records.len(),
    })
}

/// Initial data with `∂_tω` purely rotational and its curl normalized to
/// unit weighted norm; `P` carries a potential displacement of size `amp`.
pub fn curl_mode(disc: &ModeDisc, amp: f64) -> Result<ModeState> {
    let mut st = ModeState::from_profiles(disc, |s| amp * (1.0 - 0.5 * s), |_| 0.0, |_| 0.0, |s| 1.0 + 0.3 * s);
    let grid = mode_grid(&disc.params, disc.ell)?;
    let norm = curl_norm(disc, &grid, &st)?;
    for v in st.q_t.iter_mut() {
        *v /= norm;
    }
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{build_deformation, TensorGrid};
    use crate::ode::{solve_correction, DEFAULT_ATOL, DEFAULT_RTOL};
    use crate::params::derive_constants;
    use crate::radial::cartesian_pressure;
    use crate::weighted::truncated_index_set;

    fn p2(lambda: f64) -> PhysParams {
        derive_constants(2, lambda, 2.0, 1.0).unwrap()
    }

    #[test]
    fn rejects_bad_modes() {
        let p = p2(0.0);
        assert!(ModeDisc::new(&p, 0, 16).is_err());
        assert!(ModeDisc::new(&p, MAX_MODE + 1, 16).is_err());
    }

    #[test]
    fn operator_is_symmetric_and_nonnegative() {
        let p = p2(0.0);
        let d = ModeDisc::new(&p, 2, 12).unwrap();
        let n = d.len();
        let col = |k: usize| {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            d.stiffness(&e)
        };
        for a in 0..n {
            let ca = col(a);
            assert!(ca[a] > 0.0);
            for b in 0..n {
                let cb = col(b);
                let (x, y) = (d.weights[b] * ca[b], d.weights[a] * cb[a]);
                assert!((x - y).abs() < 1e-10 * x.abs().max(1.0), "{a} {b}: {x} {y}");
            }
        }
    }

    /// The modal force must agree with `κω + σ^{−ι}∂_k(σ^{ι+1}(A^k_i J^{1−γ} − δ))`
    /// evaluated on a Cartesian grid for a small displacement.
    fn cartesian_agreement(n: usize, ell: usize) -> f64 {
        let p = derive_constants(n, 0.0, 2.0, 1.0).unwrap();
        let disc = ModeDisc::new(&p, ell, 16).unwrap();
        let path = solve_correction(&p, 1.0, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        let eps = 1e-5;
        let st = ModeState::from_profiles(&disc, |s| eps * (1.0 + 0.5 * s), |s| eps * 0.7 * (1.0 - 0.3 * s), |_| 0.0, |_| 0.0);
        let [ptt, qtt, ..] = mode_time_derivatives(&disc, &st, &path).unwrap();
        let acc = ModeJets::new(&disc, &[(&ptt, &qtt)]);
        let disp = ModeJets::new(&disc, &[(&st.p, &st.q)]);
        let points = if n == 2 { 81 } else { 41 };
        let grid = TensorGrid::new(n, points, 0.7 * p.r0).unwrap();
        let omega = grid.sample_vector(|y| disp.time_jet(0, y).map(|c| c.value()));
        let field = build_deformation(&grid, omega).unwrap();
        let force = cartesian_pressure(&p, &field, 1.0);
        let (mut worst, mut scale) = (0.0f64, 0.0f64);
        for node in 0..grid.len() {
            let y = grid.coord(node);
            let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
            if !(0.15 * p.r0..0.55 * p.r0).contains(&r) {
                continue;
            }
            let a = acc.time_jet(0, y);
            let sig = p.sigma(r).powf(p.iota);
            for i in 0..n {
                let cart = -(p.kappa * field.omega[node][i] + force[node][i] / sig);
                worst = worst.max((cart - a[i].value()).abs());
                scale = scale.max(a[i].value().abs());
            }
        }
        worst / scale
    }

    #[test]
    fn modal_force_matches_cartesian_pressure_in_plane() {
        for ell in [1, 2, 3] {
            let e = cartesian_agreement(2, ell);
            assert!(e < 2e-3, "ℓ = {ell}: {e}");
        }
    }

    #[test]
    fn modal_force_matches_cartesian_pressure_in_space() {
        let e = cartesian_agreement(3, 2);
        assert!(e < 5e-3, "{e}");
    }

    #[test]
    fn zero_mode_stays_zero() {
        let p = p2(0.0);
        let d = ModeDisc::new(&p, 2, 16).unwrap();
        let path = solve_correction(&p, 5.0, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        let tr = evolve_mode(&d, &path, ModeState::zero(&d), &ModeOptions::new(5.0, 0.1)).unwrap();
        assert!(tr.final_state.p.iter().chain(&tr.final_state.q_t).all(|v| *v == 0.0));
        assert!(matches!(curl_decay_fit(&tr), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn potential_mode_keeps_zero_curl() {
        let p = p2(0.0);
        let d = ModeDisc::new(&p, 2, 16).unwrap();
        let path = solve_correction(&p, 20.0, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        let st = ModeState::from_profiles(&d, |s| 1e-2 * (1.0 - s * s), |_| 0.0, |s| 1e-2 * s, |_| 0.0);
        let tr = evolve_mode(&d, &path, st, &ModeOptions::new(20.0, 0.1)).unwrap();
        assert!(tr.records.iter().all(|r| r.curl_norm == 0.0));
        assert!(tr.final_state.p.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn curl_follows_envelope_and_refines() {
        for lambda in [0.0, 0.5] {
            let p = p2(lambda);
            let d = ModeDisc::new(&p, 2, 24).unwrap();
            let path = solve_correction(&p, 20.0, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
            let st = curl_mode(&d, 1e-3).unwrap();
            let coarse = evolve_mode(&d, &path, st.clone(), &ModeOptions::new(20.0, 0.1)).unwrap();
            let fine = evolve_mode(&d, &path, st, &ModeOptions::new(20.0, 0.05)).unwrap();
            assert_eq!(coarse.records[0].deviation, 0.0);
            assert!((coarse.records[0].curl_norm - 1.0).abs() < 1e-12);
            let (a, b) = (curl_decay_fit(&coarse).unwrap(), curl_decay_fit(&fine).unwrap());
            assert!(a.max_deviation < 1e-3, "{a:?}");
            assert!(a.max_deviation / b.max_deviation > 2.0, "{a:?} {b:?}");
        }
    }

    #[test]
    fn toroidal_mode_in_space_follows_envelope() {
        let p = derive_constants(3, 0.0, 2.0, 1.0).unwrap();
        let d = ModeDisc::new(&p, 2, 16).unwrap();
        let path = solve_correction(&p, 20.0, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        let st = curl_mode(&d, 1e-3).unwrap();
        let tr = evolve_mode(&d, &path, st, &ModeOptions::new(20.0, 0.1)).unwrap();
        assert!(curl_decay_fit(&tr).unwrap().max_deviation < 1e-3);
    }

    #[test]
    fn mode_energies_are_bounded_homogeneous_and_nonnegative() {
        let p = p2(0.0);
        let path = solve_correction(&p, 20.0, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        for ell in [1, 2, 3] {
            let d = ModeDisc::new(&p, ell, 16).unwrap();
            let mut opts = ModeOptions::new(20.0, 0.1);
            opts.record_every = 20;
            opts.indices = truncated_index_set();
            let st = curl_mode(&d, 1e-2).unwrap();
            let tr = evolve_mode(&d, &path, st.clone(), &opts).unwrap();
            let e = tr.energies.unwrap();
            let total = e.total();
            assert!(e.values.iter().flatten().all(|v| *v >= 0.0));
            let ratio = total.iter().cloned().fold(0.0, f64::max) / total[0];
            assert!(ratio < 10.0, "ℓ = {ell}: {ratio}");
            let grid = mode_grid(&p, ell).unwrap();
            let idx = truncated_index_set();
            let e1 = mode_energies(&d, &grid, &st, &path, &idx, Execution::Sequential).unwrap();
            let mut doubled = st.clone();
            for v in [&mut doubled.p, &mut doubled.q, &mut doubled.p_t, &mut doubled.q_t] {
                v.iter_mut().for_each(|x| *x *= 2.0);
            }
            let e2 = mode_energies(&d, &grid, &doubled, &path, &idx, Execution::Sequential).unwrap();
            for (a, b) in e1.iter().zip(&e2) {
                assert!((b - 4.0 * a).abs() <= 1e-10 * b.abs(), "{a} {b}");
            }
            // angular derivative energies see the mode
            assert!(e1[idx.iter().position(|k| k.j == 2).unwrap()] > 0.0);
        }
    }
}
