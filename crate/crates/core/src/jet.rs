//! Truncated multivariate Taylor polynomials in three variables.
//!
//! A [`Jet`] holds the Taylor coefficients of a field around a base point up
//! to total degree [`JET_DEGREE`]. Differentiation lowers the number of
//! trustworthy orders, which is tracked in `valid`; norms of derivative
//! tensors are only defined up to that order.

use std::ops::{Add, Mul, Sub};
use std::sync::OnceLock;

pub const JET_DEGREE: usize = 4;
const LEN: usize = 35;

struct Table {
    exps: Vec<[usize; 3]>,
    degree: Vec<usize>,
    /// `(a, b, a·b)` for every product of total degree ≤ `JET_DEGREE`.
    products: Vec<(usize, usize, usize)>,
    /// Per axis: `(source, target, factor)` for `∂_axis`.
    derivs: [Vec<(usize, usize, f64)>; 3],
    /// `α!` per monomial.
    alpha_fact: Vec<f64>,
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

fn table() -> &'static Table {
    static TABLE: OnceLock<Table> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut exps = Vec::with_capacity(LEN);
        for d in 0..=JET_DEGREE {
            for a in (0..=d).rev() {
                for b in (0..=d - a).rev() {
                    exps.push([a, b, d - a - b]);
                }
            }
        }
        debug_assert_eq!(exps.len(), LEN);
        let find = |e: [usize; 3]| exps.iter().position(|x| *x == e);
        let degree: Vec<usize> = exps.iter().map(|e| e.iter().sum()).collect();
        let mut products = Vec::new();
        for (i, a) in exps.iter().enumerate() {
            for (j, b) in exps.iter().enumerate() {
                if degree[i] + degree[j] <= JET_DEGREE {
                    let k = find([a[0] + b[0], a[1] + b[1], a[2] + b[2]]).unwrap();
                    products.push((i, j, k));
                }
            }
        }
        let derivs = [0, 1, 2].map(|axis| {
            exps.iter()
                .enumerate()
                .filter(|(_, e)| e[axis] > 0)
                .map(|(i, e)| {
                    let mut t = *e;
                    t[axis] -= 1;
                    (i, find(t).unwrap(), e[axis] as f64)
                })
                .collect()
        });
        let alpha_fact = exps.iter().map(|e| e.iter().map(|&k| factorial(k)).product()).collect();
        Table {
            exps,
            degree,
            products,
            derivs,
            alpha_fact,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    c: [f64; LEN],
    /// Orders `0..=valid` are exact.
    pub valid: usize,
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; LEN];
        c[0] = v;
        Self { c, valid: JET_DEGREE }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// `y_axis + δ_axis`.
    pub fn coordinate(axis: usize, base: f64) -> Self {
        let mut j = Self::constant(base);
        j.c[1 + axis] = 1.0;
        j
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// Coefficient of `δ^α`.
    pub fn coeff(&self, alpha: [usize; 3]) -> f64 {
        table().exps.iter().position(|e| *e == alpha).map_or(0.0, |i| self.c[i])
    }

    pub fn scale(mut self, s: f64) -> Self {
        for v in self.c.iter_mut() {
            *v *= s;
        }
        self
    }

    pub fn derivative(&self, axis: usize) -> Self {
        let mut c = [0.0; LEN];
        for &(src, dst, f) in &table().derivs[axis] {
            c[dst] = f * self.c[src];
        }
        Self {
            c,
            valid: self.valid.saturating_sub(1),
        }
    }

    /// `Σ_k a_k u^k` for a jet `u` with zero constant term, where `a_k` are
    /// Taylor coefficients of a univariate function.
    pub fn compose(series: &[f64], u: &Jet) -> Self {
        debug_assert!(u.c[0] == 0.0);
        let order = series.len().saturating_sub(1).min(JET_DEGREE);
        let mut out = Jet::constant(series.first().copied().unwrap_or(0.0));
        let mut power = Jet::constant(1.0);
        for a in series.iter().take(order + 1).skip(1) {
            power = power * *u;
            out = out + power.scale(*a);
        }
        out.valid = order.min(u.valid);
        out
    }

    /// `|∂^i f|² = i! Σ_{|α|=i} α! c_α²` at the base point.
    pub fn derivative_norm_sq(&self, order: usize) -> f64 {
        assert!(order <= self.valid, "order {order} exceeds jet validity {}", self.valid);
        let t = table();
        let sum: f64 = (0..LEN)
            .filter(|&i| t.degree[i] == order)
            .map(|i| t.alpha_fact[i] * self.c[i] * self.c[i])
            .sum();
        factorial(order) * sum
    }
}

impl Add for Jet {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        for (a, b) in self.c.iter_mut().zip(o.c) {
            *a += b;
        }
        self.valid = self.valid.min(o.valid);
        self
    }
}

impl Sub for Jet {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + o.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut c = [0.0; LEN];
        for &(i, j, k) in &table().products {
            c[k] += self.c[i] * o.c[j];
        }
        Self {
            c,
            valid: self.valid.min(o.valid),
        }
    }
}

/// A vector field as three component jets.
pub type VectorJet = [Jet; 3];

/// `(y_k + δ_k) ∂_l F − (y_l + δ_l) ∂_k F`, the rotational derivative in the
/// `(k, l)` plane.
pub fn rotational(f: &VectorJet, y: [f64; 3], k: usize, l: usize) -> VectorJet {
    let yk = Jet::coordinate(k, y[k]);
    let yl = Jet::coordinate(l, y[l]);
    f.map(|c| yk * c.derivative(l) - yl * c.derivative(k))
}

/// All `∂̄^j F` for `j = 0, 1, 2`, one vector jet per ordered choice of
/// planes `k < l`.
pub fn rotational_family(f: &VectorJet, y: [f64; 3], dim: usize, j: usize) -> Vec<VectorJet> {
    let planes: Vec<(usize, usize)> = (0..dim).flat_map(|k| (k + 1..dim).map(move |l| (k, l))).collect();
    let mut current = vec![*f];
    for _ in 0..j {
        current = current
            .iter()
            .flat_map(|g| planes.iter().map(move |&(k, l)| rotational(g, y, k, l)))
            .collect();
    }
    current
}

/// `Σ_c |∂^i F^c|²`.
pub fn vector_norm_sq(f: &VectorJet, order: usize) -> f64 {
    f.iter().map(|c| c.derivative_norm_sq(order)).sum()
}
