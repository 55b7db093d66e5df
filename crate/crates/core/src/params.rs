//! Problem constants and the Barenblatt-type self-similar profile.
//!
//! The profile is `ρ̄(t,x) = ν^{-n} (Ā − B̄ ν^{-2}|x|²)_+^{ι}` with
//! `ν = (1+t)^κ`, and it solves `∂_t ρ = (1+t)^λ Δ ρ^γ` exactly. The only
//! constant not given in closed form is `Ā`, fixed by the total mass.

use crate::error::{invalid, Error, Result};
use crate::quadrature::GaussJacobi;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

const MASS_NODES: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    pub n: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub mass: f64,
    pub kappa: f64,
    pub iota: f64,
    pub b_bar: f64,
    pub a_bar: f64,
    pub r0: f64,
}

impl PhysParams {
    /// `nγ − n + 1`, the power of θ in the correction ODE.
    pub fn p(&self) -> f64 {
        self.n as f64 * (self.gamma - 1.0) + 1.0
    }

    pub fn nu(&self, t: f64) -> f64 {
        (1.0 + t).powf(self.kappa)
    }

    pub fn nu_t(&self, t: f64) -> f64 {
        self.kappa * (1.0 + t).powf(self.kappa - 1.0)
    }

    pub fn nu_tt(&self, t: f64) -> f64 {
        self.kappa * (self.kappa - 1.0) * (1.0 + t).powf(self.kappa - 2.0)
    }

    pub fn nu_ttt(&self, t: f64) -> f64 {
        self.kappa * (self.kappa - 1.0) * (self.kappa - 2.0) * (1.0 + t).powf(self.kappa - 3.0)
    }

    /// `σ(r) = Ā − B̄ r²`, which vanishes at `r = R0`.
    pub fn sigma(&self, r: f64) -> f64 {
        self.a_bar - self.b_bar * r * r
    }

    /// Initial density `ρ̄₀ = σ^ι`, zero outside the support.
    pub fn rho0(&self, r: f64) -> f64 {
        let s = self.sigma(r);
        if s <= 0.0 {
            0.0
        } else {
            s.powf(self.iota)
        }
    }

    /// Surface area of the unit sphere in `R^n`.
    pub fn sphere_area(&self) -> f64 {
        sphere_area(self.n)
    }
}

pub fn sphere_area(n: usize) -> f64 {
    let h = 0.5 * n as f64;
    2.0 * std::f64::consts::PI.powf(h) / ln_gamma(h).exp()
}

/// Mass of `(Ā − B̄ r²)^ι` over its support, by Gauss–Jacobi in `r` with
/// weight `(R0 − r)^ι r^{n−1}`.
fn mass_by_quadrature(rule: &GaussJacobi, n: usize, iota: f64, b_bar: f64, a_bar: f64) -> f64 {
    let r0 = (a_bar / b_bar).sqrt();
    let radial = rule.integrate(0.0, r0, |r| (b_bar * (r0 + r)).powf(iota));
    sphere_area(n) * radial
}

/// Closed-form mass `|S^{n−1}| Ā^ι R0^n B(n/2, ι+1) / 2`.
pub fn mass_closed_form(n: usize, iota: f64, b_bar: f64, a_bar: f64) -> f64 {
    let r0 = (a_bar / b_bar).sqrt();
    let nf = n as f64;
    sphere_area(n) * 0.5 * (iota * a_bar.ln() + nf * r0.ln() + ln_beta(0.5 * nf, iota + 1.0)).exp()
}

/// Derive every constant from `(n, λ, γ, M)`; `Ā` by bisection on the mass.
pub fn derive_constants(n: usize, lambda: f64, gamma: f64, mass: f64) -> Result<PhysParams> {
    if n != 2 && n != 3 {
        return Err(invalid("n", format!("dimension must be 2 or 3, got {n}")));
    }
    if !(0.0..1.0).contains(&lambda) {
        return Err(invalid("lambda", format!("must lie in [0, 1), got {lambda}")));
    }
    if !(gamma > 1.0 && gamma.is_finite()) {
        return Err(invalid("gamma", format!("must exceed 1, got {gamma}")));
    }
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(invalid("mass", format!("must be positive, got {mass}")));
    }
    let nf = n as f64;
    let kappa = (1.0 + lambda) / (nf * gamma - nf + 2.0);
    let iota = 1.0 / (gamma - 1.0);
    let b_bar = (gamma - 1.0) / (2.0 * gamma) * kappa;

    let rule = GaussJacobi::new(MASS_NODES, iota, nf - 1.0)?;
    let m = |a: f64| mass_by_quadrature(&rule, n, iota, b_bar, a);

    let mut lo = 1.0;
    let mut hi = 1.0;
    while m(lo) > mass {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::RootNotConverged { iterations: 0, lo, hi });
        }
    }
    while m(hi) < mass {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::RootNotConverged { iterations: 0, lo, hi });
        }
    }
    let mut iterations = 0;
    while (hi - lo) > 1e-13 * hi {
        iterations += 1;
        if iterations > 400 {
            return Err(Error::RootNotConverged { iterations, lo, hi });
        }
        let mid = 0.5 * (lo + hi);
        if m(mid) < mass {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a_bar = 0.5 * (lo + hi);
    Ok(PhysParams {
        n,
        lambda,
        gamma,
        mass,
        kappa,
        iota,
        b_bar,
        a_bar,
        r0: (a_bar / b_bar).sqrt(),
    })
}

/// Closed-form self-similar solution; holds only the constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfSimilarProfile {
    pub params: PhysParams,
}

impl SelfSimilarProfile {
    pub fn new(params: PhysParams) -> Self {
        Self { params }
    }

    /// Support radius `ν(t) R0`.
    pub fn support_radius(&self, t: f64) -> f64 {
        self.params.nu(t) * self.params.r0
    }

    /// Density at radius `r`, zero outside the support.
    pub fn density_radial(&self, t: f64, r: f64) -> f64 {
        let p = &self.params;
        let nu = p.nu(t);
        let rho = r / self.support_radius(t);
        if rho >= 1.0 {
            return 0.0;
        }
        let s = p.a_bar * (1.0 - rho) * (1.0 + rho);
        nu.powf(-(p.n as f64)) * s.powf(p.iota)
    }

    /// Analytic `∂_t ρ̄` at radius `r` inside the support.
    pub fn density_time_derivative(&self, t: f64, r: f64) -> f64 {
        let p = &self.params;
        let nf = p.n as f64;
        let nu = p.nu(t);
        let nu_t = p.nu_t(t);
        let s = p.a_bar - p.b_bar * (r / nu).powi(2);
        if s <= 0.0 {
            return 0.0;
        }
        let ds = 2.0 * p.b_bar * r * r * nu_t / nu.powi(3);
        nu.powf(-nf) * s.powf(p.iota - 1.0) * (p.iota * ds - nf * nu_t / nu * s)
    }

    /// Squared sound speed `γ ρ̄^{γ−1}` at radius `r`.
    pub fn sound_speed_sq(&self, t: f64, r: f64) -> f64 {
        self.params.gamma * self.density_radial(t, r).powf(self.params.gamma - 1.0)
    }
}

/// Density and velocity of the self-similar flow at `(t, x)`.
pub fn barenblatt_fields(params: &PhysParams, t: f64, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    if x.len() != params.n {
        return Err(Error::DimensionMismatch {
            expected: params.n,
            found: x.len(),
        });
    }
    if t < 0.0 {
        return Err(invalid("t", format!("must be nonnegative, got {t}")));
    }
    let profile = SelfSimilarProfile::new(*params);
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let support = profile.support_radius(t);
    if r > support * (1.0 + 1e-14) {
        return Err(Error::OutsideSupport { radius: r, support });
    }
    let density = profile.density_radial(t, r);
    let factor = params.kappa / (1.0 + t);
    Ok((density, x.iter().map(|v| factor * v).collect()))
}

/// Outward normal derivative of `c²(ρ̄)` at the vacuum boundary.
pub fn vacuum_gradient(params: &PhysParams, t: f64) -> f64 {
    -2.0 * params.gamma * (params.a_bar * params.b_bar).sqrt() * (1.0 + t).powf(params.kappa - 1.0 - params.lambda)
}

/// Total mass `∫ ρ̄(t, x) dx` by the adapted quadrature.
pub fn mass_at(params: &PhysParams, t: f64) -> Result<f64> {
    let rule = GaussJacobi::new(MASS_NODES, params.iota, params.n as f64 - 1.0)?;
    let profile = SelfSimilarProfile::new(*params);
    let support = profile.support_radius(t);
    let nu = params.nu(t);
    let nf = params.n as f64;
    let radial = rule.integrate(0.0, support, |r| {
        // σ(r/ν) = B̄ (R0 − r/ν)(R0 + r/ν); the (R0 − r/ν)^ι part is in the weight
        nu.powf(-nf) * (params.b_bar * (params.r0 + r / nu) / nu).powf(params.iota)
    });
    Ok(params.sphere_area() * radial)
}

/// Sup-norm of `∂_t ρ̄ − (1+t)^λ Δ(ρ̄^γ)` on the lattice `hℤ^n` restricted
/// to `|x| ≤ 0.8 ν(t) R0`. The time derivative is analytic and the Laplacian
/// uses the second-order five/seven-point stencil.
pub fn pme_residual(params: &PhysParams, t: f64, h: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid("t", format!("must be positive, got {t}")));
    }
    let profile = SelfSimilarProfile::new(*params);
    let reach = 0.8 * profile.support_radius(t);
    if !(h > 0.0 && h < 0.25 * reach) {
        return Err(invalid("grid_spacing", format!("must lie in (0, {}), got {h}", 0.25 * reach)));
    }
    let k = (reach / h).floor() as i64;
    let n = params.n;
    let pressure = |x: &[f64; 3]| {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        profile.density_radial(t, r).powf(params.gamma)
    };
    let damping = (1.0 + t).powf(params.lambda);
    let mut worst: f64 = 0.0;
    let zrange = if n == 3 { -k..=k } else { 0..=0 };
    for iz in zrange {
        for iy in -k..=k {
            for ix in -k..=k {
                let x = [ix as f64 * h, iy as f64 * h, iz as f64 * h];
                let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                if r > reach {
                    continue;
                }
                let centre = pressure(&x);
                let mut lap = 0.0;
                for axis in 0..n {
                    let mut xp = x;
                    let mut xm = x;
                    xp[axis] += h;
                    xm[axis] -= h;
                    lap += pressure(&xp) - 2.0 * centre + pressure(&xm);
                }
                lap /= h * h;
                let res = profile.density_time_derivative(t, r) - damping * lap;
                worst = worst.max(res.abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn trivial_constants() {
        let p = derive_constants(3, 0.0, 2.0, 1.0).unwrap();
        assert_relative_eq!(p.kappa, 0.2, epsilon = 1e-15);
        assert_relative_eq!(p.iota, 1.0, epsilon = 1e-15);
        assert_relative_eq!(p.b_bar, 0.05, epsilon = 1e-15);
        let q = derive_constants(2, 0.0, 2.0, 1.0).unwrap();
        assert_relative_eq!(q.kappa, 0.25, epsilon = 1e-15);
        assert_relative_eq!(q.b_bar, 0.0625, epsilon = 1e-15);
    }

    #[test]
    fn a_bar_matches_closed_form_oracle() {
        let p = derive_constants(3, 0.0, 2.0, 1.0).unwrap();
        // M = (8π/15) Ā^{5/2} / B̄^{3/2}
        let a = (15.0 / (8.0 * std::f64::consts::PI) * 0.05f64.powf(1.5)).powf(0.4);
        assert_relative_eq!(p.a_bar, a, max_relative = 1e-12);
        assert!((p.a_bar - 0.1348).abs() < 5e-5);
        for &(n, lambda, gamma) in &[(2, 0.3, 1.4), (3, 0.7, 5.0 / 3.0), (2, 0.0, 3.0)] {
            let p = derive_constants(n, lambda, gamma, 2.5).unwrap();
            let m = mass_closed_form(n, p.iota, p.b_bar, p.a_bar);
            assert_relative_eq!(m, 2.5, max_relative = 1e-11);
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(derive_constants(1, 0.0, 2.0, 1.0).is_err());
        assert!(derive_constants(3, 1.0, 2.0, 1.0).is_err());
        assert!(derive_constants(3, 0.0, 1.0, 1.0).is_err());
        assert!(derive_constants(3, 0.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn fields_at_centre_and_boundary() {
        let p = derive_constants(3, 0.0, 2.0, 1.0).unwrap();
        let (rho, v) = barenblatt_fields(&p, 0.0, &[0.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(rho, p.a_bar, max_relative = 1e-14);
        assert!(v.iter().all(|c| *c == 0.0));
        let edge = p.nu(3.0) * p.r0;
        let (rho, _) = barenblatt_fields(&p, 3.0, &[0.0, edge, 0.0]).unwrap();
        assert_eq!(rho, 0.0);
        let x = p.nu(1.0) * p.r0 / 2.0;
        let (_, v) = barenblatt_fields(&p, 1.0, &[x, 0.0, 0.0]).unwrap();
        assert_relative_eq!(v[0], 0.1 * x, max_relative = 1e-14);
        assert!(barenblatt_fields(&p, 0.0, &[p.r0 * 1.01, 0.0, 0.0]).is_err());
    }

    #[test]
    fn vacuum_gradient_values() {
        let p = derive_constants(3, 0.0, 2.0, 1.0).unwrap();
        let g = vacuum_gradient(&p, 0.0);
        assert!((g + 0.3284).abs() < 1e-4);
        // one-sided difference of c² at the boundary
        let prof = SelfSimilarProfile::new(p);
        let t = 2.0;
        let rb = prof.support_radius(t);
        let h = 1e-6;
        let fd = (prof.sound_speed_sq(t, rb) - prof.sound_speed_sq(t, rb - h)) / h;
        assert_relative_eq!(fd, vacuum_gradient(&p, t), max_relative = 1e-4);
    }

    #[test]
    fn mass_conserved_in_time() {
        let p = derive_constants(3, 0.4, 1.5, 1.0).unwrap();
        for &t in &[0.0, 1.0, 37.0, 1e4] {
            assert_relative_eq!(mass_at(&p, t).unwrap(), 1.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn time_derivative_matches_centred_difference() {
        let p = derive_constants(2, 0.3, 2.0, 1.0).unwrap();
        let prof = SelfSimilarProfile::new(p);
        let (t, r, dt) = (1.5, 0.4 * prof.support_radius(1.5), 1e-4);
        let fd = (prof.density_radial(t + dt, r) - prof.density_radial(t - dt, r)) / (2.0 * dt);
        assert_relative_eq!(fd, prof.density_time_derivative(t, r), max_relative = 1e-7);
    }

    #[test]
    fn pme_residual_is_second_order() {
        let p = derive_constants(3, 0.0, 2.0, 1.0).unwrap();
        let h = 0.08;
        let coarse = pme_residual(&p, 1.0, h).unwrap();
        let fine = pme_residual(&p, 1.0, h / 2.0).unwrap();
        let ratio = coarse / fine;
        assert!((ratio - 4.0).abs() < 0.8, "ratio {ratio}");
    }
}
