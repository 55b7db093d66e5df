//! Quadrature rules and polynomial interpolation.
//!
//! Gauss–Jacobi rules integrate `(1-x)^α (1+x)^β f(x)` exactly for polynomial
//! `f` of degree `2n-1`; they are the workhorse for every integral whose
//! weight vanishes fractionally at the vacuum boundary. Nodes come from the
//! Golub–Welsch eigenproblem, polished by Newton on the orthonormal
//! recurrence, and weights are the Christoffel numbers.

use crate::error::{invalid, Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::beta::ln_beta;

#[derive(Debug, Clone)]
pub struct GaussJacobi {
    alpha: f64,
    beta: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

struct Recurrence {
    diag: Vec<f64>,
    // off[k] couples p_k and p_{k+1}
    off: Vec<f64>,
    mu0: f64,
}

fn jacobi_recurrence(n: usize, alpha: f64, beta: f64) -> Recurrence {
    let ab = alpha + beta;
    let mut diag = Vec::with_capacity(n);
    for k in 0..n {
        let a = if k == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            let kk = 2.0 * k as f64 + ab;
            (beta * beta - alpha * alpha) / (kk * (kk + 2.0))
        };
        diag.push(a);
    }
    let mut off = Vec::with_capacity(n);
    for k in 1..=n {
        let kf = k as f64;
        let b2 = if k == 1 {
            4.0 * (1.0 + alpha) * (1.0 + beta) / ((2.0 + ab).powi(2) * (3.0 + ab))
        } else {
            let kk = 2.0 * kf + ab;
            4.0 * kf * (kf + alpha) * (kf + beta) * (kf + ab) / (kk * kk * (kk + 1.0) * (kk - 1.0))
        };
        off.push(b2.sqrt());
    }
    let mu0 = ((ab + 1.0) * std::f64::consts::LN_2 + ln_beta(alpha + 1.0, beta + 1.0)).exp();
    Recurrence { diag, off, mu0 }
}

impl GaussJacobi {
    pub fn new(n: usize, alpha: f64, beta: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "quadrature needs at least one node"));
        }
        if !(alpha > -1.0 && alpha.is_finite()) {
            return Err(invalid("alpha", format!("must exceed -1, got {alpha}")));
        }
        if !(beta > -1.0 && beta.is_finite()) {
            return Err(invalid("beta", format!("must exceed -1, got {beta}")));
        }
        let rec = jacobi_recurrence(n, alpha, beta);
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            jac[(k, k)] = rec.diag[k];
            if k + 1 < n {
                jac[(k, k + 1)] = rec.off[k];
                jac[(k + 1, k)] = rec.off[k];
            }
        }
        let eig = SymmetricEigen::new(jac);
        let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let mut weights = Vec::with_capacity(n);
        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let (p, dp, _) = orthonormal_eval(&rec, n, *x);
                if dp == 0.0 {
                    break;
                }
                let step = p / dp;
                *x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            let (_, _, christoffel) = orthonormal_eval(&rec, n, *x);
            weights.push(1.0 / christoffel);
        }
        Ok(Self {
            alpha,
            beta,
            nodes,
            weights,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes on [-1, 1].
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights for `∫_a^b (b-r)^α (r-a)^β f(r) dr`.
    pub fn mapped(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let half = 0.5 * (b - a);
        let scale = half.powf(self.alpha + self.beta + 1.0);
        let nodes = self.nodes.iter().map(|x| a + half * (1.0 + x)).collect();
        let weights = self.weights.iter().map(|w| w * scale).collect();
        (nodes, weights)
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        let half = 0.5 * (b - a);
        let scale = half.powf(self.alpha + self.beta + 1.0);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(a + half * (1.0 + x)))
            .sum::<f64>()
            * scale
    }
}

/// Returns `(p_n(x), p_n'(x), Σ_{k<n} p_k(x)^2)` for the orthonormal family.
fn orthonormal_eval(rec: &Recurrence, n: usize, x: f64) -> (f64, f64, f64) {
    let mut p_prev = 0.0;
    let mut dp_prev = 0.0;
    let mut p = 1.0 / rec.mu0.sqrt();
    let mut dp = 0.0;
    let mut sum = 0.0;
    for k in 0..n {
        sum += p * p;
        let b_prev = if k == 0 { 0.0 } else { rec.off[k - 1] };
        let p_next = ((x - rec.diag[k]) * p - b_prev * p_prev) / rec.off[k];
        let dp_next = ((x - rec.diag[k]) * dp + p - b_prev * dp_prev) / rec.off[k];
        p_prev = p;
        dp_prev = dp;
        p = p_next;
        dp = dp_next;
    }
    (p, dp, sum)
}

/// Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> Result<GaussJacobi> {
    GaussJacobi::new(n, 0.0, 0.0)
}

/// Barycentric Lagrange interpolation on arbitrary distinct nodes.
#[derive(Debug, Clone)]
pub struct Barycentric {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Barycentric {
    pub fn new(nodes: &[f64]) -> Self {
        let n = nodes.len();
        let span = nodes.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x)) - nodes.iter().fold(f64::INFINITY, |m, &x| m.min(x));
        let cap = if span > 0.0 { 4.0 / span } else { 1.0 };
        // products are accumulated in log form to stay in range for large n
        let mut logs = vec![0.0; n];
        let mut signs = vec![1.0; n];
        for j in 0..n {
            for k in 0..n {
                if k != j {
                    let d = (nodes[j] - nodes[k]) * cap;
                    logs[j] += d.abs().ln();
                    if d < 0.0 {
                        signs[j] = -signs[j];
                    }
                }
            }
        }
        let shift = logs.iter().fold(f64::INFINITY, |m, &l| m.min(l));
        let weights = logs.iter().zip(&signs).map(|(l, s)| s * (-(l - shift)).exp()).collect();
        Self {
            nodes: nodes.to_vec(),
            weights,
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn eval(&self, x: f64, values: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for ((xj, wj), fj) in self.nodes.iter().zip(&self.weights).zip(values) {
            let d = x - xj;
            if d == 0.0 {
                return *fj;
            }
            let c = wj / d;
            num += c * fj;
            den += c;
        }
        num / den
    }

    /// Row-major interpolation matrix from the nodes onto `targets`.
    pub fn interpolation_matrix(&self, targets: &[f64]) -> Vec<f64> {
        let n = self.nodes.len();
        let mut out = vec![0.0; targets.len() * n];
        for (i, &x) in targets.iter().enumerate() {
            let row = &mut out[i * n..(i + 1) * n];
            if let Some(j) = self.nodes.iter().position(|&xj| xj == x) {
                row[j] = 1.0;
                continue;
            }
            let mut den = 0.0;
            for j in 0..n {
                let c = self.weights[j] / (x - self.nodes[j]);
                row[j] = c;
                den += c;
            }
            for v in row.iter_mut() {
                *v /= den;
            }
        }
        out
    }

    /// Row-major first-derivative matrix at the nodes.
    pub fn differentiation_matrix(&self) -> Vec<f64> {
        let n = self.nodes.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            let mut diag = 0.0;
            for j in 0..n {
                if i != j {
                    let v = (self.weights[j] / self.weights[i]) / (self.nodes[i] - self.nodes[j]);
                    d[i * n + j] = v;
                    diag -= v;
                }
            }
            d[i * n + i] = diag;
        }
        d
    }
}

/// Dense row-major matrix-vector product.
pub(crate) fn matvec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m[i * n..(i + 1) * n];
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

const GK_X: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = GK_WK[7] * fc;
    let mut gauss = GK_WG[3] * fc;
    for i in 0..7 {
        let dx = h * GK_X[i];
        let s = f(c - dx) + f(c + dx);
        kron += GK_WK[i] * s;
        if i % 2 == 1 {
            gauss += GK_WG[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7, 15) quadrature on [a, b].
pub fn adaptive_gk<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut intervals = vec![(a, b, gk15(&f, a, b))];
    for _ in 0..20_000 {
        let total: f64 = intervals.iter().map(|iv| iv.2 .0).sum();
        let err: f64 = intervals.iter().map(|iv| iv.2 .1).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.partial_cmp(&y.1 .2 .1).unwrap())
            .unwrap();
        let (lo, hi, _) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        intervals.push((lo, mid, gk15(&f, lo, mid)));
        intervals.push((mid, hi, gk15(&f, mid, hi)));
    }
    let total: f64 = intervals.iter().map(|iv| iv.2 .0).sum();
    let err: f64 = intervals.iter().map(|iv| iv.2 .1).sum();
    Err(Error::QuadratureNotConverged {
        estimate: err,
        tolerance: abs_tol.max(rel_tol * total.abs()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::function::beta::beta;

    #[test]
    fn legendre_integrates_polynomials() {
        let q = gauss_legendre(5).unwrap();
        // exact for degree 9
        let v = q.integrate(-1.0, 1.0, |x| x.powi(8) + 3.0 * x.powi(9) - x);
        assert_relative_eq!(v, 2.0 / 9.0, epsilon = 1e-14);
        let w: f64 = q.weights().iter().sum();
        assert_relative_eq!(w, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn jacobi_moments_match_beta_functions() {
        for &(a, b) in &[(0.5, 0.0), (1.0, 0.5), (2.0, 2.0), (-0.5, 1.0), (1.0 / 3.0, -0.5)] {
            let q = GaussJacobi::new(12, a, b).unwrap();
            for k in 0..10 {
                // ∫_0^1 (1-s)^a s^(b+k) ds
                let got = q.integrate(0.0, 1.0, |s| s.powi(k));
                let exact = beta(a + 1.0, b + k as f64 + 1.0);
                assert_relative_eq!(got, exact, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn large_rule_stays_accurate() {
        let q = GaussJacobi::new(200, 1.5, 0.5).unwrap();
        let got = q.integrate(0.0, 1.0, |s| s * s);
        assert_relative_eq!(got, beta(2.5, 3.5), max_relative = 1e-12);
        assert!(q.nodes().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rejects_bad_exponents() {
        assert!(GaussJacobi::new(4, -1.0, 0.0).is_err());
        assert!(GaussJacobi::new(0, 0.0, 0.0).is_err());
    }

    #[test]
    fn barycentric_differentiates_polynomials_exactly() {
        let q = GaussJacobi::new(9, 1.0, 0.5).unwrap();
        let (s, _) = q.mapped(0.0, 1.0);
        let bary = Barycentric::new(&s);
        let vals: Vec<f64> = s.iter().map(|x| x.powi(5) - 2.0 * x * x).collect();
        let d = bary.differentiation_matrix();
        let mut dv = vec![0.0; s.len()];
        matvec(&d, &vals, &mut dv);
        for (x, v) in s.iter().zip(&dv) {
            assert_relative_eq!(*v, 5.0 * x.powi(4) - 4.0 * x, epsilon = 1e-11);
        }
        assert_relative_eq!(bary.eval(1.0, &vals), -1.0, epsilon = 1e-12);
        let m = bary.interpolation_matrix(&[0.0, 0.3]);
        let at0: f64 = m[..s.len()].iter().zip(&vals).map(|(a, b)| a * b).sum();
        assert!(at0.abs() < 1e-12);
    }

    #[test]
    fn adaptive_gk_handles_sharp_integrand() {
        let v = adaptive_gk(|x: f64| (x - 50.0).exp(), 0.0, 50.0, 1e-14, 1e-12).unwrap();
        assert_relative_eq!(v, 1.0 - (-50.0f64).exp(), max_relative = 1e-11);
        assert_eq!(adaptive_gk(|x| x, 1.0, 1.0, 1e-12, 1e-12).unwrap(), 0.0);
    }
}
