use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("root finder did not converge after {iterations} iterations (bracket [{lo}, {hi}])")]
    RootNotConverged { iterations: usize, lo: f64, hi: f64 },

    #[error("quadrature did not converge: estimated error {estimate:e} above tolerance {tolerance:e}")]
    QuadratureNotConverged { estimate: f64, tolerance: f64 },

    #[error("point |x| = {radius} lies outside the support radius {support}")]
    OutsideSupport { radius: f64, support: f64 },

    #[error("integrator failure at t = {t}: {reason}")]
    Integrator { t: f64, reason: String },

    #[error("non-invertible deformation at node {node} (J = {jacobian})")]
    SingularDeformation { node: usize, jacobian: f64 },

    #[error("degenerate radial deformation at node {node}, t = {t}: {reason}")]
    DegenerateRadial { node: usize, t: f64, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unsupported derivative order: {0}")]
    UnsupportedOrder(String),

    #[error("fit window invalid: {0}")]
    FitWindow(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("configuration error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
