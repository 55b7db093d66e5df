//! σ-weighted quadrature on the reference ball, the energies `E^{m,i,j}`
//! and the Hardy-type ratio.
//!
//! Radial integrals use Gauss–Jacobi nodes for the weight
//! `(R0 − r)^α r^{n−1}`; a power `σ^a` with `a ≥ α` is carried as the smooth
//! factor `B̄^a (R0 − r)^{a−α} (R0 + r)^a`. Fields are integrated over a
//! product of these radial nodes and an angular rule.

use crate::error::{invalid, Error, Result};
use crate::exec::{self, Execution};
use crate::jet::{rotational_family, vector_norm_sq, VectorJet};
use crate::params::{sphere_area, PhysParams};
use crate::quadrature::{gauss_legendre, GaussJacobi};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use std::f64::consts::PI;
use std::io::Write;

/// How directions on the unit sphere are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AngularRule {
    /// One direction carrying the full sphere area; exact for integrands
    /// invariant under rotations.
    Isotropic,
    /// `k` equispaced angles in the plane (n = 2).
    Circle(usize),
    /// Gauss–Legendre in `cos ϑ` along the meridian `φ = 0`; exact for
    /// integrands invariant under rotations about the last axis (n = 3).
    Zonal(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedGrid {
    pub dim: usize,
    pub r0: f64,
    pub b_bar: f64,
    pub alpha: f64,
    pub radial: Vec<f64>,
    pub radial_weights: Vec<f64>,
    pub directions: Vec<[f64; 3]>,
    pub direction_weights: Vec<f64>,
}

impl WeightedGrid {
    pub fn new(params: &PhysParams, radial_nodes: usize, alpha: f64, angular: AngularRule) -> Result<Self> {
        if !(alpha > -1.0) {
            return Err(invalid("alpha", format!("must exceed -1, got {alpha}")));
        }
        let rule = GaussJacobi::new(radial_nodes, alpha, params.n as f64 - 1.0)?;
        let (radial, radial_weights) = rule.mapped(0.0, params.r0);
        let (directions, direction_weights) = match angular {
            AngularRule::Isotropic => {
                let mut e = [0.0; 3];
                e[0] = 1.0;
                (vec![e], vec![params.sphere_area()])
            }
            AngularRule::Circle(k) => {
                if params.n != 2 || k == 0 {
                    return Err(invalid("angular", "circle rule needs n = 2 and at least one angle"));
                }
                let dirs = (0..k)
                    .map(|i| {
                        let a = 2.0 * PI * i as f64 / k as f64;
                        [a.cos(), a.sin(), 0.0]
                    })
                    .collect();
                (dirs, vec![2.0 * PI / k as f64; k])
            }
            AngularRule::Zonal(k) => {
                if params.n != 3 {
                    return Err(invalid("angular", "zonal rule needs n = 3"));
                }
                let gl = gauss_legendre(k)?;
                let dirs = gl.nodes().iter().map(|&c| [(1.0 - c * c).sqrt(), 0.0, c]).collect();
                (dirs, gl.weights().iter().map(|w| 2.0 * PI * w).collect())
            }
        };
        Ok(Self {
            dim: params.n,
            r0: params.r0,
            b_bar: params.b_bar,
            alpha,
            radial,
            radial_weights,
            directions,
            direction_weights,
        })
    }

    /// Rule for energies: `α = ι`, so every weight `σ^{ι+d}` is smooth.
    pub fn for_energies(params: &PhysParams, radial_nodes: usize, angular: AngularRule) -> Result<Self> {
        Self::new(params, radial_nodes, params.iota, angular)
    }

    pub fn len(&self) -> usize {
        self.radial.len() * self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Point `k`, radial index major.
    pub fn point(&self, k: usize) -> [f64; 3] {
        let nd = self.directions.len();
        let r = self.radial[k / nd];
        self.directions[k % nd].map(|c| r * c)
    }

    pub fn radius(&self, k: usize) -> f64 {
        self.radial[k / self.directions.len()]
    }

    /// Weight of point `k` for the integrand `σ^a f`.
    pub fn weight(&self, k: usize, a: f64) -> Result<f64> {
        if a < self.alpha - 1e-12 {
            return Err(invalid(
                "exponent",
                format!("σ^{a} is more singular than the rule's weight (R0 − r)^{}", self.alpha),
            ));
        }
        let nd = self.directions.len();
        let (i, d) = (k / nd, k % nd);
        let r = self.radial[i];
        let smooth = self.b_bar.powf(a) * (self.r0 - r).powf(a - self.alpha) * (self.r0 + r).powf(a);
        Ok(self.radial_weights[i] * self.direction_weights[d] * smooth)
    }

    fn weights(&self, a: f64) -> Result<Vec<f64>> {
        (0..self.len()).map(|k| self.weight(k, a)).collect()
    }
}

/// `∫_Ω σ^a |y|^{2k} dy = |S| B̄^a R0^{2a+n+2k} B(n/2 + k, a + 1) / 2`.
pub fn sigma_moment(params: &PhysParams, a: f64, k: usize) -> f64 {
    let nf = params.n as f64;
    let kf = k as f64;
    let log = a * params.b_bar.ln() + (2.0 * a + nf + 2.0 * kf) * params.r0.ln() + ln_beta(0.5 * nf + kf, a + 1.0);
    sphere_area(params.n) * 0.5 * log.exp()
}

/// `∫_Ω σ^a |f|² dy`. `field` holds `len()` points of equally many
/// components, point major.
pub fn weighted_norm(grid: &WeightedGrid, field: &[f64], a: f64) -> Result<f64> {
    if a < 0.0 {
        return Err(invalid("exponent", format!("must be nonnegative, got {a}")));
    }
    let len = grid.len();
    if len == 0 || !field.len().is_multiple_of(len) {
        return Err(Error::DimensionMismatch {
            expected: len,
            found: field.len(),
        });
    }
    let comps = field.len() / len;
    let w = grid.weights(a)?;
    Ok(w.iter()
        .zip(field.chunks(comps))
        .map(|(w, f)| w * f.iter().map(|v| v * v).sum::<f64>())
        .sum())
}

/// `∫σ^k f² / ∫σ^{k+2}(f² + |∂f|²)`; zero when `f ≡ 0`.
pub fn hardy_check(grid: &WeightedGrid, f: &[f64], grad: &[f64], k: f64) -> Result<f64> {
    if !(k > -1.0) {
        return Err(invalid("k", format!("must exceed -1, got {k}")));
    }
    if f.len() != grid.len() || !grad.len().is_multiple_of(grid.len().max(1)) {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            found: f.len(),
        });
    }
    let num = weighted_norm(grid, f, k)?;
    if num == 0.0 {
        return Ok(0.0);
    }
    let den = weighted_norm(grid, f, k + 2.0)? + weighted_norm(grid, grad, k + 2.0)?;
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardyReport {
    pub exponents: Vec<f64>,
    /// Largest ratio seen per exponent.
    pub max_ratio: Vec<f64>,
    pub samples: usize,
}

impl HardyReport {
    pub fn bound(&self) -> f64 {
        self.max_ratio.iter().copied().fold(0.0, f64::max)
    }
}

/// A radial test function and its derivative.
type Profile = Box<dyn Fn(f64) -> (f64, f64)>;

/// Hardy ratios for `(R0 − r)^p`, `p = 1, 2, 3`, and random polynomials in
/// `r²`, over `k ∈ {ι − 1/2, ι, ι + 1}` clipped above −1.
pub fn hardy_family(params: &PhysParams, radial_nodes: usize, random_samples: usize, seed: u64) -> Result<HardyReport> {
    let mut exponents: Vec<f64> = [params.iota - 0.5, params.iota, params.iota + 1.0]
        .iter()
        .map(|k| k.max(-0.5))
        .collect();
    exponents.dedup();
    let r0 = params.r0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // each function as (f, f') in r
    let mut family: Vec<Profile> = Vec::new();
    for p in 1..=3 {
        let pf = p as f64;
        family.push(Box::new(move |r: f64| ((r0 - r).powf(pf), -pf * (r0 - r).powf(pf - 1.0))));
    }
    for _ in 0..random_samples {
        let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        family.push(Box::new(move |r: f64| {
            let s = r * r / (r0 * r0);
            let f = c.iter().rev().fold(0.0, |acc, a| acc * s + a);
            let df = c.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, a)| acc * s + k as f64 * a);
            (f, df * 2.0 * r / (r0 * r0))
        }));
    }
    let mut max_ratio = vec![0.0f64; exponents.len()];
    for (slot, &k) in max_ratio.iter_mut().zip(&exponents) {
        let grid = WeightedGrid::new(params, radial_nodes, k, AngularRule::Isotropic)?;
        for f in &family {
            let (vals, grads): (Vec<f64>, Vec<f64>) = grid.radial.iter().map(|&r| f(r)).unzip();
            *slot = slot.max(hardy_check(&grid, &vals, &grads, k)?);
        }
    }
    Ok(HardyReport {
        exponents,
        max_ratio,
        samples: family.len(),
    })
}

/// `(m, i, j)`: time, space and rotational derivative orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnergyIndex {
    pub m: usize,
    pub i: usize,
    pub j: usize,
}

impl EnergyIndex {
    pub fn new(m: usize, i: usize, j: usize) -> Self {
        Self { m, i, j }
    }

    pub fn label(&self) -> String {
        format!("E{}{}{}", self.m, self.i, self.j)
    }
}

/// All indices with `m + i + j ≤ 2`.
pub fn truncated_index_set() -> Vec<EnergyIndex> {
    let mut out = Vec::new();
    for total in 0..=2 {
        for m in (0..=total).rev() {
            for i in (0..=total - m).rev() {
                out.push(EnergyIndex::new(m, i, total - m - i));
            }
        }
    }
    out
}

/// Anything that can produce the Taylor jet of `∂_t^m ω` at a point.
pub trait JetSource: Sync {
    /// Highest available time-derivative order.
    fn max_time_order(&self) -> usize;
    fn time_jet(&self, m: usize, y: [f64; 3]) -> VectorJet;
}

/// `S[m][d][j] = ∫σ^{ι+d} |∂^d ∂̄^j ∂_t^m ω|²` for the orders needed by
/// `indices`.
fn weighted_derivative_norms(
    grid: &WeightedGrid,
    source: &dyn JetSource,
    params: &PhysParams,
    indices: &[EnergyIndex],
    execution: Execution,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let m_max = indices.iter().map(|k| k.m + 1).max().unwrap_or(0);
    let d_max = indices.iter().map(|k| k.i + 1).max().unwrap_or(0);
    let j_max = indices.iter().map(|k| k.j).max().unwrap_or(0);
    if m_max > source.max_time_order() {
        return Err(Error::UnsupportedOrder(format!(
            "time derivative of order {m_max} requested, source provides {}",
            source.max_time_order()
        )));
    }
    let weights: Vec<Vec<f64>> = (0..=d_max).map(|d| grid.weights(params.iota + d as f64)).collect::<Result<_>>()?;
    let dim = grid.dim;
    let mut needed = vec![false; (m_max + 1) * (d_max + 1) * (j_max + 1)];
    let slot = |m: usize, d: usize, j: usize| (m * (d_max + 1) + d) * (j_max + 1) + j;
    for k in indices {
        for (m, d) in [(k.m + 1, k.i), (k.m, k.i), (k.m, k.i + 1)] {
            needed[slot(m, d, k.j)] = true;
        }
    }
    let per_point = exec::map_range(execution, grid.len(), |k| -> Result<Vec<f64>> {
        let y = grid.point(k);
        let mut out = vec![0.0; (m_max + 1) * (d_max + 1) * (j_max + 1)];
        for m in 0..=m_max {
            let base = source.time_jet(m, y);
            for j in 0..=j_max {
                let family = rotational_family(&base, y, dim, j);
                for d in 0..=d_max {
                    if !needed[slot(m, d, j)] {
                        continue;
                    }
                    if d + j > base[0].valid {
                        return Err(Error::UnsupportedOrder(format!(
                            "{d} spatial and {j} rotational derivatives exceed the jet order {}",
                            base[0].valid
                        )));
                    }
                    let s: f64 = family.iter().map(|g| vector_norm_sq(g, d)).sum();
                    out[slot(m, d, j)] = weights[d][k] * s;
                }
            }
        }
        Ok(out)
    });
    let mut total = vec![vec![vec![0.0; j_max + 1]; d_max + 1]; m_max + 1];
    for row in per_point {
        let row = row?;
        for m in 0..=m_max {
            for d in 0..=d_max {
                for j in 0..=j_max {
                    total[m][d][j] += row[slot(m, d, j)];
                }
            }
        }
    }
    Ok(total)
}

/// `E^{m,i,j}(t)` for each index.
pub fn energy_components(
    grid: &WeightedGrid,
    source: &dyn JetSource,
    params: &PhysParams,
    t: f64,
    indices: &[EnergyIndex],
    execution: Execution,
) -> Result<Vec<f64>> {
    let s = weighted_derivative_norms(grid, source, params, indices, execution)?;
    Ok(indices
        .iter()
        .map(|k| {
            let delta = if k.m == 0 { 0.0 } else { 1.0 };
            let pre = (1.0 + t).powf(2.0 * k.m as f64 + delta * params.kappa);
            pre * ((1.0 + t).powf(1.0 + params.lambda) * s[k.m + 1][k.i][k.j] + s[k.m][k.i][k.j] + s[k.m][k.i + 1][k.j])
        })
        .collect())
}

pub fn energy_component(grid: &WeightedGrid, source: &dyn JetSource, params: &PhysParams, t: f64, index: EnergyIndex) -> Result<f64> {
    Ok(energy_components(grid, source, params, t, &[index], Execution::Sequential)?[0])
}

/// Energies over output times; `total` sums the implemented indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub indices: Vec<EnergyIndex>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl EnergyReport {
    pub fn new(indices: Vec<EnergyIndex>) -> Self {
        Self {
            indices,
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.indices.len());
        self.times.push(t);
        self.values.push(row);
    }

    pub fn total(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn column(&self, index: EnergyIndex) -> Option<Vec<f64>> {
        let c = self.indices.iter().position(|k| *k == index)?;
        Some(self.values.iter().map(|r| r[c]).collect())
    }

    /// Columns `t`, one per index, then `total`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.indices.iter().map(|k| k.label()));
        header.push("total".into());
        w.write_record(&header)?;
        for (t, row) in self.times.iter().zip(&self.values) {
            let mut rec = vec![format!("{t:e}")];
            rec.extend(row.iter().map(|v| format!("{v:e}")));
            rec.push(format!("{:e}", row.iter().sum::<f64>()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let mut indices = Vec::new();
        for h in headers.iter().skip(1) {
            if h == "total" {
                break;
            }
            let digits: Vec<usize> = h
                .strip_prefix('E')
                .map(|d| d.chars().filter_map(|c| c.to_digit(10).map(|v| v as usize)).collect())
                .unwrap_or_default();
            if digits.len() != 3 {
                return Err(invalid("energies.csv", format!("unexpected column {h}")));
            }
            indices.push(EnergyIndex::new(digits[0], digits[1], digits[2]));
        }
        let mut report = Self::new(indices);
        for rec in r.records() {
            let rec = rec?;
            let nums: Vec<f64> = rec
                .iter()
                .map(|v| v.parse::<f64>().map_err(|e| invalid("energies.csv", e.to_string())))
                .collect::<Result<_>>()?;
            let k = report.indices.len();
            report.push(nums[0], nums[1..=k].to_vec());
        }
        Ok(report)
    }
}
