//! Flow-map algebra on tensor-product grids.
//!
//! Vector fields are stored as `[f64; 3]` per node and matrices as
//! `Matrix3`; in two dimensions the third component is unused and the
//! deformation gradient carries a unit `(2, 2)` entry, so determinants and
//! inverses need no special casing. Gradients are stored as
//! `G[(i, k)] = ∂_k v^i`, and the inverse deformation as
//! `A[(k, i)] = A^k_i`.

use crate::error::{invalid, Error, Result};
use crate::exec::{self, Execution};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

/// Uniform grid on `[-L, L]^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorGrid {
    pub dim: usize,
    pub points: usize,
    pub half_width: f64,
}

impl TensorGrid {
    pub fn new(dim: usize, points: usize, half_width: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(invalid("dim", format!("must be 2 or 3, got {dim}")));
        }
        if points < 9 {
            return Err(invalid("points", format!("need at least 9 per axis, got {points}")));
        }
        if !(half_width > 0.0) {
            return Err(invalid("half_width", "must be positive"));
        }
        Ok(Self { dim, points, half_width })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.points - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same box with every cell halved; old nodes stay nodes.
    pub fn refined(&self) -> Self {
        Self {
            points: 2 * self.points - 1,
            ..*self
        }
    }

    fn stride(&self, axis: usize) -> usize {
        self.points.pow(axis as u32)
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let m = self.points;
        let mut out = [0; 3];
        let mut rest = idx;
        for slot in out.iter_mut().take(self.dim) {
            *slot = rest % m;
            rest /= m;
        }
        out
    }

    pub fn coord(&self, idx: usize) -> [f64; 3] {
        let mi = self.multi_index(idx);
        let h = self.spacing();
        let mut y = [0.0; 3];
        for a in 0..self.dim {
            y[a] = -self.half_width + mi[a] as f64 * h;
        }
        y
    }

    pub fn sample_scalar<F: Fn([f64; 3]) -> f64 + Sync + Send>(&self, f: F) -> Vec<f64> {
        exec::map_range(Execution::available(), self.len(), |i| f(self.coord(i)))
    }

    pub fn sample_vector<F: Fn([f64; 3]) -> [f64; 3] + Sync + Send>(&self, f: F) -> Vec<[f64; 3]> {
        exec::map_range(Execution::available(), self.len(), |i| f(self.coord(i)))
    }

    /// Nodes with `|y| ≤ radius` and at least `margin` cells from every face.
    pub fn region(&self, radius: f64, margin: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| {
                let mi = self.multi_index(i);
                let y = self.coord(i);
                let inside = (0..self.dim).all(|a| mi[a] >= margin && mi[a] + margin < self.points);
                inside && (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt() <= radius
            })
            .collect()
    }
}

/// First derivative along `axis`: fourth-order central in the interior,
/// third-order one-sided in the two layers next to each face.
pub fn derivative(grid: &TensorGrid, f: &[f64], axis: usize) -> Vec<f64> {
    if axis >= grid.dim {
        return vec![0.0; f.len()];
    }
    let m = grid.points;
    let s = grid.stride(axis);
    let h = grid.spacing();
    let c12 = 1.0 / (12.0 * h);
    let c6 = 1.0 / (6.0 * h);
    (0..f.len())
        .map(|idx| {
            let i = (idx / s) % m;
            let at = |k: isize| f[(idx as isize + k * s as isize) as usize];
            if i >= 2 && i + 2 < m {
                (at(-2) - 8.0 * at(-1) + 8.0 * at(1) - at(2)) * c12
            } else if i == 0 {
                (-11.0 * at(0) + 18.0 * at(1) - 9.0 * at(2) + 2.0 * at(3)) * c6
            } else if i == 1 {
                (-2.0 * at(-1) - 3.0 * at(0) + 6.0 * at(1) - at(2)) * c6
            } else if i + 1 == m {
                (11.0 * at(0) - 18.0 * at(-1) + 9.0 * at(-2) - 2.0 * at(-3)) * c6
            } else {
                (2.0 * at(1) + 3.0 * at(0) - 6.0 * at(-1) + at(-2)) * c6
            }
        })
        .collect()
}

pub fn gradient(grid: &TensorGrid, f: &[f64]) -> Vec<[f64; 3]> {
    let parts: Vec<Vec<f64>> = (0..3).map(|a| derivative(grid, f, a)).collect();
    (0..f.len()).map(|i| [parts[0][i], parts[1][i], parts[2][i]]).collect()
}

fn component(v: &[[f64; 3]], c: usize) -> Vec<f64> {
    v.iter().map(|x| x[c]).collect()
}

fn entry(m: &[Matrix3<f64>], r: usize, c: usize) -> Vec<f64> {
    m.iter().map(|x| x[(r, c)]).collect()
}

/// `G[(i, k)] = ∂_k v^i` at every node.
pub fn vector_gradient(grid: &TensorGrid, v: &[[f64; 3]]) -> Vec<Matrix3<f64>> {
    vector_gradient_with(Execution::Sequential, grid, v)
}

/// As [`vector_gradient`], with the `(i, k)` derivatives spread over `exec`.
pub fn vector_gradient_with(exec: Execution, grid: &TensorGrid, v: &[[f64; 3]]) -> Vec<Matrix3<f64>> {
    let pairs: Vec<(usize, usize)> = (0..grid.dim).flat_map(|i| (0..grid.dim).map(move |k| (i, k))).collect();
    let columns = exec::map(exec, &pairs, |&(i, k)| derivative(grid, &component(v, i), k));
    let mut out = vec![Matrix3::zeros(); v.len()];
    for (&(i, k), d) in pairs.iter().zip(columns) {
        for (o, val) in out.iter_mut().zip(d) {
            o[(i, k)] = val;
        }
    }
    out
}

/// Derivative of every matrix entry along `axis`.
fn matrix_derivative(grid: &TensorGrid, m: &[Matrix3<f64>], axis: usize) -> Vec<Matrix3<f64>> {
    let mut out = vec![Matrix3::zeros(); m.len()];
    for r in 0..grid.dim {
        for c in 0..grid.dim {
            let d = derivative(grid, &entry(m, r, c), axis);
            for (o, val) in out.iter_mut().zip(d) {
                o[(r, c)] = val;
            }
        }
    }
    out
}

/// `ω`, its gradient, `J = det(I + ∂ω)` and `A = (I + ∂ω)^{-1}`.
#[derive(Debug, Clone)]
pub struct DeformationField {
    pub grid: TensorGrid,
    pub omega: Vec<[f64; 3]>,
    pub grad: Vec<Matrix3<f64>>,
    pub jacobian: Vec<f64>,
    pub inverse: Vec<Matrix3<f64>>,
}

/// Finite-difference gradient, then determinant and inverse per node.
pub fn build_deformation(grid: &TensorGrid, omega: Vec<[f64; 3]>) -> Result<DeformationField> {
    build_deformation_with(Execution::available(), grid, omega)
}

pub fn build_deformation_with(exec: Execution, grid: &TensorGrid, omega: Vec<[f64; 3]>) -> Result<DeformationField> {
    if omega.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            found: omega.len(),
        });
    }
    let grad = vector_gradient_with(exec, grid, &omega);
    from_gradient(exec, *grid, omega, grad)
}

/// Deformation from a supplied gradient (e.g. analytic).
pub fn from_gradient(exec: Execution, grid: TensorGrid, omega: Vec<[f64; 3]>, grad: Vec<Matrix3<f64>>) -> Result<DeformationField> {
    let per_node = exec::map(exec, &grad, |g| {
        let f = Matrix3::identity() + g;
        let det = f.determinant();
        (det, f.try_inverse())
    });
    let mut jacobian = Vec::with_capacity(per_node.len());
    let mut inverse = Vec::with_capacity(per_node.len());
    for (node, (det, inv)) in per_node.into_iter().enumerate() {
        match inv {
            Some(a) if det > 0.0 => {
                jacobian.push(det);
                inverse.push(a);
            }
            _ => return Err(Error::SingularDeformation { node, jacobian: det }),
        }
    }
    Ok(DeformationField {
        grid,
        omega,
        grad,
        jacobian,
        inverse,
    })
}

/// `∇_η`, `div_η` and `curl_η` applied to a vector field. In two
/// dimensions the scalar curl sits in component 2.
#[derive(Debug, Clone)]
pub struct EtaOperators {
    pub grad: Vec<Matrix3<f64>>,
    pub div: Vec<f64>,
    pub curl: Vec<[f64; 3]>,
}

impl DeformationField {
    /// `[∇_η f]_i = A^k_i ∂_k f`.
    pub fn eta_gradient(&self, f: &[f64]) -> Result<Vec<[f64; 3]>> {
        self.check_len(f.len())?;
        let g = gradient(&self.grid, f);
        Ok(g.iter()
            .zip(&self.inverse)
            .map(|(d, a)| {
                let mut out = [0.0; 3];
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..3).map(|k| a[(k, i)] * d[k]).sum();
                }
                out
            })
            .collect())
    }

    /// `[∇_η F]^i_j = A^k_j ∂_k F^i`, `div_η F`, `curl_η F`.
    pub fn eta_operators(&self, v: &[[f64; 3]]) -> Result<EtaOperators> {
        self.check_len(v.len())?;
        let g = vector_gradient(&self.grid, v);
        let grad: Vec<Matrix3<f64>> = g.iter().zip(&self.inverse).map(|(g, a)| g * a).collect();
        let div = grad.iter().map(|m| m.trace()).collect();
        let curl = grad
            .iter()
            .map(|m| {
                if self.grid.dim == 2 {
                    [0.0, 0.0, m[(1, 0)] - m[(0, 1)]]
                } else {
                    [m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]]
                }
            })
            .collect();
        Ok(EtaOperators { grad, div, curl })
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.grid.len() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.len(),
                found: len,
            });
        }
        Ok(())
    }

    /// Largest `|J A − adj(I + ∂ω)|` entry over all nodes.
    pub fn adjugate_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for ((g, a), j) in self.grad.iter().zip(&self.inverse).zip(&self.jacobian) {
            let adj = adjugate(&(Matrix3::identity() + g));
            worst = worst.max((a * *j - adj).abs().max());
        }
        worst
    }

    /// Ranges of `|∂ω|`, `J` and `|A^i_j|` over `nodes`.
    pub fn bounds(&self, nodes: &[usize]) -> DeformationBounds {
        let mut b = DeformationBounds {
            max_grad: 0.0,
            jacobian_min: f64::INFINITY,
            jacobian_max: f64::NEG_INFINITY,
            max_inverse_entry: 0.0,
        };
        for &i in nodes {
            b.max_grad = b.max_grad.max(self.grad[i].abs().max());
            b.jacobian_min = b.jacobian_min.min(self.jacobian[i]);
            b.jacobian_max = b.jacobian_max.max(self.jacobian[i]);
            b.max_inverse_entry = b.max_inverse_entry.max(self.inverse[i].abs().max());
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeformationBounds {
    pub max_grad: f64,
    pub jacobian_min: f64,
    pub jacobian_max: f64,
    pub max_inverse_entry: f64,
}

impl DeformationBounds {
    /// `1/2 ≤ J ≤ 2` and `|A^i_j| ≤ 2`.
    pub fn within_small_deformation_bounds(&self) -> bool {
        self.jacobian_min >= 0.5 && self.jacobian_max <= 2.0 && self.max_inverse_entry <= 2.0
    }
}

fn adjugate(m: &Matrix3<f64>) -> Matrix3<f64> {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[(r0, c0)] * m[(r1, c1)] - m[(r0, c1)] * m[(r1, c0)];
    Matrix3::new(
        c(1, 2, 1, 2),
        -c(0, 2, 1, 2),
        c(0, 1, 1, 2),
        -c(1, 2, 0, 2),
        c(0, 2, 0, 2),
        -c(0, 1, 0, 2),
        c(1, 2, 0, 1),
        -c(0, 2, 0, 1),
        c(0, 1, 0, 1),
    )
}

/// `det(I + G)` split by order in `G`: `(div ω, ½((div ω)² − tr G²), det G)`.
/// In two dimensions the cubic part is zero and the quadratic part is exact.
pub fn jacobian_expansion(g: &Matrix3<f64>, dim: usize) -> [f64; 3] {
    let tr = g.trace();
    let quad = 0.5 * (tr * tr - (g * g).trace());
    let cubic = if dim == 3 { g.determinant() } else { 0.0 };
    [tr, quad, cubic]
}

/// Residual norms of the kinematic identities on an interior region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// `∂_k(J A^k_i)`
    pub piola: f64,
    /// `∂_j J − J A^s_r ∂_j∂_s ω^r`
    pub jacobian_gradient: f64,
    /// `∂_j A^k_i + A^k_r A^s_i ∂_j∂_s ω^r`
    pub inverse_gradient: f64,
    /// `∂_t J − J A^s_r ∂_s v^r`
    pub jacobian_rate: f64,
    /// `∂_t A^k_i + A^k_r A^s_i ∂_s v^r`
    pub inverse_rate: f64,
    /// `J A − adj(I + ∂ω)`
    pub adjugate: f64,
}

/// Evaluate the identities on nodes with `|y| ≤ radius` and four cells
/// from the faces. Time formulas use `ω(t ± δ) = ω ± δ v`.
pub fn check_identities(field: &DeformationField, velocity: &[[f64; 3]], radius: f64) -> Result<IdentityReport> {
    field.check_len(velocity.len())?;
    let grid = &field.grid;
    let nodes = grid.region(radius, 4);
    if nodes.is_empty() {
        return Err(invalid("radius", "no interior nodes in the region"));
    }
    let dim = grid.dim;

    let cof: Vec<Matrix3<f64>> = field.inverse.iter().zip(&field.jacobian).map(|(a, j)| a * *j).collect();
    let mut piola = vec![[0.0; 3]; grid.len()];
    for k in 0..dim {
        for i in 0..dim {
            let d = derivative(grid, &entry(&cof, k, i), k);
            for (p, v) in piola.iter_mut().zip(d) {
                p[i] += v;
            }
        }
    }

    let hess: Vec<Vec<Matrix3<f64>>> = (0..dim).map(|j| matrix_derivative(grid, &field.grad, j)).collect();
    let dj: Vec<Vec<f64>> = (0..dim).map(|j| derivative(grid, &field.jacobian, j)).collect();
    let da: Vec<Vec<Matrix3<f64>>> = (0..dim).map(|j| matrix_derivative(grid, &field.inverse, j)).collect();

    let vgrad = vector_gradient(grid, velocity);
    let delta = 1e-6;
    let shifted = |sign: f64| -> Result<DeformationField> {
        let g = field.grad.iter().zip(&vgrad).map(|(g, v)| g + v * (sign * delta)).collect();
        from_gradient(Execution::available(), *grid, field.omega.clone(), g)
    };
    let plus = shifted(1.0)?;
    let minus = shifted(-1.0)?;

    let mut r = IdentityReport {
        piola: 0.0,
        jacobian_gradient: 0.0,
        inverse_gradient: 0.0,
        jacobian_rate: 0.0,
        inverse_rate: 0.0,
        adjugate: 0.0,
    };
    for &n in &nodes {
        let a = &field.inverse[n];
        let j = field.jacobian[n];
        r.piola = r.piola.max(piola[n].iter().fold(0.0f64, |m, v| m.max(v.abs())));
        for jj in 0..dim {
            let h = &hess[jj][n];
            r.jacobian_gradient = r.jacobian_gradient.max((dj[jj][n] - j * (a * h).trace()).abs());
            r.inverse_gradient = r.inverse_gradient.max((da[jj][n] + a * h * a).abs().max());
        }
        let dv = &vgrad[n];
        let jt = (plus.jacobian[n] - minus.jacobian[n]) / (2.0 * delta);
        r.jacobian_rate = r.jacobian_rate.max((jt - j * (a * dv).trace()).abs());
        let at = (plus.inverse[n] - minus.inverse[n]) / (2.0 * delta);
        r.inverse_rate = r.inverse_rate.max((at + a * dv * a).abs().max());
        let adj = adjugate(&(Matrix3::identity() + field.grad[n]));
        r.adjugate = r.adjugate.max((a * j - adj).abs().max());
    }
    Ok(r)
}
