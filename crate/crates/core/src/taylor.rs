//! Truncated univariate Taylor arithmetic.
//!
//! Right-hand sides written against [`Scalar`] run either on plain `f64` or
//! on [`Taylor2`], which propagates the first two time derivatives of every
//! intermediate quantity. Feeding the known jets of the state into the
//! equation of motion yields the next time derivatives exactly, without
//! differencing a trajectory.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn powf(self, a: f64) -> Self;
    fn ln(self) -> Self;
    fn exp(self) -> Self;
    fn ln_1p(self) -> Self;
    fn exp_m1(self) -> Self;
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn powf(self, a: f64) -> Self {
        f64::powf(self, a)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    fn exp_m1(self) -> Self {
        f64::exp_m1(self)
    }
}

/// `c0 + c1 τ + c2 τ²`, truncated after the quadratic term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Taylor2 {
    pub c: [f64; 3],
}

impl Taylor2 {
    pub fn new(c0: f64, c1: f64, c2: f64) -> Self {
        Self { c: [c0, c1, c2] }
    }

    /// Jet of a function from its value and first two derivatives.
    pub fn from_derivatives(f: f64, df: f64, d2f: f64) -> Self {
        Self::new(f, df, 0.5 * d2f)
    }

    pub fn d1(&self) -> f64 {
        self.c[1]
    }

    pub fn d2(&self) -> f64 {
        2.0 * self.c[2]
    }
}

impl Add for Taylor2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.c[0] + o.c[0], self.c[1] + o.c[1], self.c[2] + o.c[2])
    }
}

impl Sub for Taylor2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.c[0] - o.c[0], self.c[1] - o.c[1], self.c[2] - o.c[2])
    }
}

impl Mul for Taylor2 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let (a, b) = (self.c, o.c);
        Self::new(a[0] * b[0], a[0] * b[1] + a[1] * b[0], a[0] * b[2] + a[1] * b[1] + a[2] * b[0])
    }
}

impl Div for Taylor2 {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let (a, b) = (self.c, o.c);
        let q0 = a[0] / b[0];
        let q1 = (a[1] - q0 * b[1]) / b[0];
        let q2 = (a[2] - q0 * b[2] - q1 * b[1]) / b[0];
        Self::new(q0, q1, q2)
    }
}

impl Neg for Taylor2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.c[0], -self.c[1], -self.c[2])
    }
}

impl Add<f64> for Taylor2 {
    type Output = Self;
    fn add(self, o: f64) -> Self {
        Self::new(self.c[0] + o, self.c[1], self.c[2])
    }
}

impl Sub<f64> for Taylor2 {
    type Output = Self;
    fn sub(self, o: f64) -> Self {
        Self::new(self.c[0] - o, self.c[1], self.c[2])
    }
}

impl Mul<f64> for Taylor2 {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        Self::new(self.c[0] * o, self.c[1] * o, self.c[2] * o)
    }
}

impl Div<f64> for Taylor2 {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        Self::new(self.c[0] / o, self.c[1] / o, self.c[2] / o)
    }
}

impl Scalar for Taylor2 {
    fn cst(v: f64) -> Self {
        Self::new(v, 0.0, 0.0)
    }

    fn value(&self) -> f64 {
        self.c[0]
    }

    fn powf(self, a: f64) -> Self {
        let [f0, f1, f2] = self.c;
        let g0 = f0.powf(a);
        let r = f1 / f0;
        Self::new(g0, a * g0 * r, g0 * (a * f2 / f0 + 0.5 * a * (a - 1.0) * r * r))
    }

    fn ln(self) -> Self {
        let [f0, f1, f2] = self.c;
        let r = f1 / f0;
        Self::new(f0.ln(), r, f2 / f0 - 0.5 * r * r)
    }

    fn exp(self) -> Self {
        let [f0, f1, f2] = self.c;
        let g0 = f0.exp();
        Self::new(g0, g0 * f1, g0 * (f2 + 0.5 * f1 * f1))
    }

    fn ln_1p(self) -> Self {
        let [f0, f1, f2] = self.c;
        let r = f1 / (1.0 + f0);
        Self::new(f0.ln_1p(), r, f2 / (1.0 + f0) - 0.5 * r * r)
    }

    fn exp_m1(self) -> Self {
        let [f0, f1, f2] = self.c;
        let g0 = f0.exp();
        Self::new(f0.exp_m1(), g0 * f1, g0 * (f2 + 0.5 * f1 * f1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn jet_of(f: impl Fn(f64) -> f64, x: f64) -> [f64; 3] {
        let h = 1e-3;
        let d1 = (f(x + h) - f(x - h)) / (2.0 * h);
        let d2 = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
        [f(x), d1, 0.5 * d2]
    }

    #[test]
    fn composite_expression_matches_differences() {
        let x0 = 0.7;
        let x = Taylor2::new(x0, 1.0, 0.0);
        let g = ((x * x + 1.0).powf(-1.5) / (x.exp() - 0.3) + x.ln() * 2.0) * x;
        let f = |v: f64| ((v * v + 1.0).powf(-1.5) / (v.exp() - 0.3) + v.ln() * 2.0) * v;
        let want = jet_of(f, x0);
        for k in 0..3 {
            assert_relative_eq!(g.c[k], want[k], max_relative = 1e-5);
        }
    }

    #[test]
    fn accurate_variants_agree_with_plain_ones() {
        let x = Taylor2::new(0.3, -0.7, 0.2);
        let (a, b) = (x.ln_1p(), (x + 1.0).ln());
        let (c, d) = (x.exp_m1(), x.exp() - 1.0);
        for k in 0..3 {
            assert_relative_eq!(a.c[k], b.c[k], epsilon = 1e-15);
            assert_relative_eq!(c.c[k], d.c[k], epsilon = 1e-15);
        }
        assert_eq!(Taylor2::new(1e-20, 0.0, 0.0).exp_m1().c[0], 1e-20);
    }

    proptest! {
        #[test]
        fn powf_inverts(a in 0.2f64..3.0, c0 in 0.5f64..2.0, c1 in -1.0f64..1.0, c2 in -1.0f64..1.0) {
            let x = Taylor2::new(c0, c1, c2);
            let back = x.powf(a).powf(1.0 / a);
            for k in 0..3 {
                prop_assert!((back.c[k] - x.c[k]).abs() < 1e-10);
            }
        }

        #[test]
        fn division_inverts_multiplication(a in proptest::array::uniform3(-2.0f64..2.0), b0 in 0.5f64..2.0, b1 in -1.0f64..1.0) {
            let x = Taylor2 { c: a };
            let y = Taylor2::new(b0, b1, 0.3);
            let back = (x * y) / y;
            for k in 0..3 {
                prop_assert!((back.c[k] - x.c[k]).abs() < 1e-10);
            }
        }
    }
}
