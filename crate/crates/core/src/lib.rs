//! Numerical laboratory for damped compressible Euler flows with a physical
//! vacuum boundary, built around Barenblatt-type self-similar solutions.
//!
//! The crate covers the self-similar profile and its constants, the scalar
//! correction ODE for the expansion rate, Lagrangian kinematics on tensor
//! grids, σ-weighted quadrature and energies, a nonlinear radial solver, a
//! linearized angular-mode solver, and decay-rate diagnostics.

pub mod angular;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod harness;
pub mod integrate;
pub mod jet;
pub mod kinematics;
pub mod ode;
pub mod params;
pub mod quadrature;
pub mod radial;
pub mod suite;
pub mod taylor;
pub mod weighted;

pub use error::{Error, Result};
pub use exec::Execution;
pub use params::{derive_constants, PhysParams, SelfSimilarProfile};
