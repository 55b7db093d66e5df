//! Explicit Runge–Kutta integrators for first-order systems.

use crate::error::{Error, Result};

/// Right-hand side `f(t, y, dy)`; errors abort the integration.
pub trait Rhs {
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

impl<F> Rhs for F
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self(t, y, dy)
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus the embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Dormand–Prince 5(4) with a persistent step-size hint, so an integration
/// split at any output time continues exactly as an unsplit one would.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub hint: f64,
    pub max_steps: usize,
    pub accepted: usize,
    pub rejected: usize,
    k: Vec<Vec<f64>>,
    stage: Vec<f64>,
    next: Vec<f64>,
}

impl Dopri5 {
    pub fn new(dim: usize, rtol: f64, atol: f64, initial_step: f64) -> Self {
        Self {
            rtol,
            atol,
            hint: initial_step,
            max_steps: 50_000_000,
            accepted: 0,
            rejected: 0,
            k: vec![vec![0.0; dim]; 7],
            stage: vec![0.0; dim],
            next: vec![0.0; dim],
        }
    }

    /// Integrate from `*t` to `t_end`, landing on `t_end` exactly. `cap(t)`
    /// bounds the step size from above (stability limits).
    pub fn advance<F: Rhs, G: Fn(f64) -> f64>(&mut self, rhs: &mut F, t: &mut f64, y: &mut [f64], t_end: f64, cap: G) -> Result<()> {
        let dim = y.len();
        let mut steps = 0usize;
        while *t < t_end {
            steps += 1;
            if steps > self.max_steps {
                return Err(Error::Integrator {
                    t: *t,
                    reason: format!("step budget {} exhausted", self.max_steps),
                });
            }
            let limit = cap(*t);
            let proposal = self.hint.min(limit);
            let remaining = t_end - *t;
            let clipped = proposal >= remaining;
            let h = if clipped { remaining } else { proposal };
            if !(h > 0.0) || h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::Integrator {
                    t: *t,
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }

            rhs.eval(*t, y, &mut self.k[0])?;
            for s in 1..7 {
                for i in 0..dim {
                    let mut acc = y[i];
                    for (j, a) in A[s].iter().take(s).enumerate() {
                        if *a != 0.0 {
                            acc += h * a * self.k[j][i];
                        }
                    }
                    self.stage[i] = acc;
                }
                let (_, tail) = self.k.split_at_mut(s);
                rhs.eval(*t + C[s] * h, &self.stage, &mut tail[0])?;
                if s == 6 {
                    self.next.copy_from_slice(&self.stage);
                }
            }
            let mut err = 0.0;
            for i in 0..dim {
                let mut e = 0.0;
                for (s, coeff) in E.iter().enumerate() {
                    if *coeff != 0.0 {
                        e += coeff * self.k[s][i];
                    }
                }
                let scale = self.atol + self.rtol * y[i].abs().max(self.next[i].abs());
                let r = h * e / scale;
                err += r * r;
            }
            let err = if dim == 0 { 0.0 } else { (err / dim as f64).sqrt() };
            if !err.is_finite() {
                self.rejected += 1;
                self.hint = 0.25 * h;
                continue;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                self.accepted += 1;
                *t = if clipped { t_end } else { *t + h };
                y.copy_from_slice(&self.next);
                let grown = h * factor;
                // a step shortened to land on t_end says little about the
                // natural step size, so the hint survives unless it shrank
                if !(clipped && h < self.hint && grown >= h) {
                    self.hint = grown;
                }
            } else {
                self.rejected += 1;
                self.hint = h * factor.min(1.0);
            }
        }
        Ok(())
    }
}

/// Classical fourth-order Runge–Kutta with fixed step.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k: [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]],
            stage: vec![0.0; dim],
        }
    }

    pub fn step<F: Rhs>(&mut self, rhs: &mut F, t: f64, y: &mut [f64], h: f64) -> Result<()> {
        let dim = y.len();
        rhs.eval(t, y, &mut self.k[0])?;
        for i in 0..dim {
            self.stage[i] = y[i] + 0.5 * h * self.k[0][i];
        }
        rhs.eval(t + 0.5 * h, &self.stage, &mut self.k[1])?;
        for i in 0..dim {
            self.stage[i] = y[i] + 0.5 * h * self.k[1][i];
        }
        rhs.eval(t + 0.5 * h, &self.stage, &mut self.k[2])?;
        for i in 0..dim {
            self.stage[i] = y[i] + h * self.k[2][i];
        }
        rhs.eval(t + h, &self.stage, &mut self.k[3])?;
        for i in 0..dim {
            y[i] += h / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
        Ok(())
    }

    /// Integrate to `t_end` in `steps` equal steps.
    pub fn run<F: Rhs>(&mut self, rhs: &mut F, t0: f64, y: &mut [f64], t_end: f64, steps: usize) -> Result<()> {
        let h = (t_end - t0) / steps as f64;
        for k in 0..steps {
            self.step(rhs, t0 + k as f64 * h, y, h)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn oscillator(_t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy[0] = y[1];
        dy[1] = -y[0];
        Ok(())
    }

    #[test]
    fn dopri_hits_endpoint_and_is_accurate() {
        let mut dp = Dopri5::new(2, 1e-10, 1e-12, 1e-3);
        let mut y = [1.0, 0.0];
        let mut t = 0.0;
        let mut f = oscillator;
        dp.advance(&mut f, &mut t, &mut y, 10.0, |_| f64::INFINITY).unwrap();
        assert_eq!(t, 10.0);
        assert_relative_eq!(y[0], 10f64.cos(), epsilon = 1e-8);
        assert_relative_eq!(y[1], -10f64.sin(), epsilon = 1e-8);
    }

    #[test]
    fn split_integration_with_hint_is_deterministic() {
        let mut dp = Dopri5::new(2, 1e-8, 1e-10, 1e-3);
        let mut a = [1.0, 0.0];
        let mut t = 0.0;
        for s in [1.0, 2.0, 3.0] {
            dp.advance(&mut oscillator, &mut t, &mut a, s, |_| 0.5).unwrap();
        }
        let ha = dp.hint;
        // restart from the state after the first segment
        let mut dp = Dopri5::new(2, 1e-8, 1e-10, 1e-3);
        let mut y = [1.0, 0.0];
        let mut t = 0.0;
        dp.advance(&mut oscillator, &mut t, &mut y, 1.0, |_| 0.5).unwrap();
        let mut restarted = Dopri5::new(2, 1e-8, 1e-10, dp.hint);
        restarted.advance(&mut oscillator, &mut t, &mut y, 2.0, |_| 0.5).unwrap();
        restarted.advance(&mut oscillator, &mut t, &mut y, 3.0, |_| 0.5).unwrap();
        assert_eq!(a, y);
        assert_eq!(ha, restarted.hint);
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let err = |steps| {
            let mut y = [1.0, 0.0];
            Rk4::new(2).run(&mut oscillator, 0.0, &mut y, 5.0, steps).unwrap();
            (y[0] - 5f64.cos()).abs()
        };
        let ratio = err(50) / err(100);
        assert!((ratio - 16.0).abs() < 2.0, "ratio {ratio}");
    }
}
