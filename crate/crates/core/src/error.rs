//! Error type shared by all modules.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;

/// Failure modes of the numerical machinery.
///
/// Validation failures (shape/dimension/parameter) are always checked before
/// any expensive work; numerical failures (nonconvergence, precision,
/// degeneracy) carry enough context to identify the offending computation.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Point dimensions disagree, or an operation requires a specific dimension.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Sample counts or array shapes disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A size cap (e.g. the assignment-solver cap) was exceeded.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A scalar or structured parameter is out of its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A vector that must be unit-norm is not.
    #[error("normalization error: {0}")]
    Normalization(String),

    /// A covariance is not bounded below by the requested elliptic floor.
    #[error("ellipticity violation: {0}")]
    Ellipticity(String),

    /// Degenerate input (e.g. zero diffusion where a positive one is required,
    /// or a fit with too few usable points).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An iterative solve failed to reach its residual target.
    #[error("nonconvergence: {0}")]
    NonConvergence(String),

    /// Quadrature or scan could not reach the requested accuracy.
    #[error("precision failure: {0}")]
    Precision(String),

    /// A particle became non-finite during stepping.
    #[error("divergence at t = {time}: {detail}")]
    Divergence { time: f64, detail: String },

    /// A frozen-measure run failed its stationarity criterion.
    #[error("nonstationary run: {0}")]
    NonStationary(String),

    /// Invalid experiment/CLI configuration.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// The requested operation is not defined for this model shape.
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    /// Derived constants contradict each other (e.g. C1 > C2).
    #[error("inconsistent constants: {0}")]
    Inconsistency(String),

    /// A feasibility search found no admissible point in its bracket.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Filesystem / serialization problems while writing run artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization problems.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
