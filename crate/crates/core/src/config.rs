//! JSON run configuration.

use crate::error::{Error, Result};
use crate::ode::{DEFAULT_ATOL, DEFAULT_RTOL};
use crate::params::{derive_constants, PhysParams};
use crate::radial::SeedShape;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const CONFIG_SCHEMA: &str = "vacuumlab.run/1";
pub const MIN_RESOLUTION: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsBlock {
    pub n: usize,
    pub lambda: f64,
    pub gamma: f64,
    #[serde(rename = "M")]
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedBlock {
    pub shape: SeedShape,
    /// Amplitude `ε` of `w0 = ε · shape(r)`.
    pub amplitude: f64,
}

fn default_energy_nodes() -> usize {
    16
}

fn default_per_decade() -> usize {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    /// Radial collocation nodes.
    pub resolution: usize,
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
    pub seed: SeedBlock,
    /// Radial nodes of the energy quadrature; 0 skips energies.
    #[serde(default = "default_energy_nodes")]
    pub energy_nodes: usize,
    #[serde(default = "default_per_decade")]
    pub outputs_per_decade: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeBlock {
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for OdeBlock {
    fn default() -> Self {
        Self {
            t_end: 1e4,
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsBlock {
    pub directory: PathBuf,
    /// Write a state every this many outputs; 0 writes none.
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceBlock {
    /// Allowed excess of fitted exponents over their bounds.
    pub slack: f64,
    /// Largest accepted `sup E(t)/E(0)`.
    pub ratio_threshold: f64,
    /// Largest accepted `sup |w|` for unperturbed runs.
    #[serde(default = "default_preservation")]
    pub preservation: f64,
}

fn default_preservation() -> f64 {
    1e-8
}

impl Default for AcceptanceBlock {
    fn default() -> Self {
        Self {
            slack: 0.1,
            ratio_threshold: 10.0,
            preservation: default_preservation(),
        }
    }
}

/// Axes of a parameter sweep; empty axes keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub epsilon: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub params: ParamsBlock,
    pub solver: SolverBlock,
    #[serde(default)]
    pub ode: OdeBlock,
    pub outputs: OutputsBlock,
    #[serde(default)]
    pub acceptance: AcceptanceBlock,
    /// Seed of every randomized component; echoed with the run.
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
}

fn bad(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

impl RunConfig {
    /// The unperturbed reference run in three dimensions.
    pub fn anchor(directory: impl Into<PathBuf>) -> Self {
        Self {
            schema: CONFIG_SCHEMA.into(),
            params: ParamsBlock {
                n: 3,
                lambda: 0.0,
                gamma: 2.0,
                mass: 1.0,
            },
            solver: SolverBlock {
                resolution: 256,
                t_end: 1e4,
                rtol: 1e-8,
                atol: 1e-14,
                seed: SeedBlock {
                    shape: SeedShape::Bump,
                    amplitude: 0.0,
                },
                energy_nodes: default_energy_nodes(),
                outputs_per_decade: default_per_decade(),
            },
            ode: OdeBlock::default(),
            outputs: OutputsBlock {
                directory: directory.into(),
                checkpoint_every: 30,
            },
            acceptance: AcceptanceBlock::default(),
            rng_seed: 0,
            sweep: None,
        }
    }

    /// Parse and validate. Syntax errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        // serde_json reports the line and column in its message
        let cfg: Self = serde_json::from_str(text).map_err(|e| bad("json", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(bad("schema", format!("expected {CONFIG_SCHEMA}, got {}", self.schema)));
        }
        self.physical()?;
        let s = &self.solver;
        if s.resolution < MIN_RESOLUTION {
            return Err(bad(
                "solver.resolution",
                format!("need at least {MIN_RESOLUTION} nodes, got {}", s.resolution),
            ));
        }
        if s.energy_nodes != 0 && s.energy_nodes < 4 {
            return Err(bad("solver.energy_nodes", "use 0 to skip energies or at least 4 nodes"));
        }
        if !(s.seed.amplitude >= 0.0 && s.seed.amplitude.is_finite()) {
            return Err(bad(
                "solver.seed.amplitude",
                format!("must be finite and nonnegative, got {}", s.seed.amplitude),
            ));
        }
        if !(s.t_end >= 1.0) {
            return Err(bad("solver.t_end", format!("must be at least 1, got {}", s.t_end)));
        }
        if s.outputs_per_decade == 0 {
            return Err(bad("solver.outputs_per_decade", "must be positive"));
        }
        for (f, v) in [
            ("solver.rtol", s.rtol),
            ("solver.atol", s.atol),
            ("ode.rtol", self.ode.rtol),
            ("ode.atol", self.ode.atol),
        ] {
            if !(v > 0.0 && v <= 1e-3) {
                return Err(bad(f, format!("must lie in (0, 1e-3], got {v}")));
            }
        }
        if !(self.ode.t_end >= s.t_end) {
            return Err(bad("ode.t_end", format!("must cover solver.t_end = {}", s.t_end)));
        }
        let a = &self.acceptance;
        if !(a.slack >= 0.0 && a.ratio_threshold >= 1.0 && a.preservation > 0.0) {
            return Err(bad("acceptance", "slack ≥ 0, ratio_threshold ≥ 1 and preservation > 0 required"));
        }
        if let Some(sw) = &self.sweep {
            for v in &sw.epsilon {
                if !(*v >= 0.0) {
                    return Err(bad("sweep.epsilon", format!("amplitudes must be nonnegative, got {v}")));
                }
            }
            for (name, vals) in [("sweep.lambda", &sw.lambda), ("sweep.gamma", &sw.gamma)] {
                for v in vals {
                    let mut trial = self.params.clone();
                    if name == "sweep.lambda" {
                        trial.lambda = *v;
                    } else {
                        trial.gamma = *v;
                    }
                    derive_constants(trial.n, trial.lambda, trial.gamma, trial.mass).map_err(|e| bad(name, e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    pub fn physical(&self) -> Result<PhysParams> {
        let p = &self.params;
        derive_constants(p.n, p.lambda, p.gamma, p.mass).map_err(|e| bad("params", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_defaults() {
        let cfg = RunConfig::anchor("runs/a");
        let text = cfg.to_json().unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        let minimal = r#"{
            "schema": "vacuumlab.run/1",
            "params": {"n": 3, "lambda": 0, "gamma": 2, "M": 1},
            "solver": {"resolution": 32, "t_end": 100, "rtol": 1e-8, "atol": 1e-14,
                       "seed": {"shape": "smooth_bump", "amplitude": 1e-3}},
            "outputs": {"directory": "out", "checkpoint_every": 0}
        }"#;
        let c = RunConfig::from_json(minimal).unwrap();
        assert_eq!(c.acceptance, AcceptanceBlock::default());
        assert_eq!(c.solver.seed.shape, SeedShape::SmoothBump);
    }

    #[test]
    fn errors_name_the_field() {
        let mut cfg = RunConfig::anchor("x");
        cfg.solver.resolution = 8;
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "solver.resolution"));
        let mut cfg = RunConfig::anchor("x");
        cfg.solver.seed.amplitude = -1.0;
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "solver.seed.amplitude"));
        let mut cfg = RunConfig::anchor("x");
        cfg.params.gamma = 1.0;
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "params"));
        let text = RunConfig::anchor("x").to_json().unwrap().replace("\"bump\"", "\"spiky\"");
        let err = RunConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
        assert!(RunConfig::from_json("{ \"schema\": ").is_err());
    }
}
