use thiserror::Error;

/// Failure of a single operation (derivative request, impact map, solver).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {context}: invalid chart point or blow-up")]
    NonFinite { context: &'static str },

    #[error("mass matrix is singular (|det| = {det:e} below threshold {threshold:e})")]
    SingularMass { det: f64, threshold: f64 },

    #[error("{solver} did not converge within {iterations} iterations (residual {residual:e})")]
    NewtonDiverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("impact normal is degenerate (dh M^-1 dh^T = {value:e})")]
    DegenerateNormal { value: f64 },

    #[error("guard gradient vanishes at the event point (|grad h| = {norm:e})")]
    DegenerateGuard { norm: f64 },

    #[error("event localization failed near t = {t}: {detail}")]
    EventLocalization { t: f64, detail: String },

    #[error("guard depends on the cyclic coordinate (max deviation {max_dev:e})")]
    GuardNotReducible { max_dev: f64 },

    #[error("cyclic mass component is singular (M = {value:e}); velocity recovery undefined")]
    CyclicMassSingular { value: f64 },

    #[error("cyclic invariance violated: {detail}")]
    CyclicInvariance { detail: String },

    #[error("scenario validation failed: {0}")]
    Validation(String),

    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("csv format error at line {line}: {message}")]
    CsvFormat { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Why a hybrid execution stopped before reaching its horizon.
///
/// Carried inside [`crate::hybrid::Termination::Failed`] so that a partial
/// trajectory is still returned; execution failures are never silent.
#[derive(Debug, Clone, PartialEq)]
pub enum ExecFailure {
    /// Initial state violated `h(q) >= 0`.
    OutsideDomain { h: f64 },
    /// A field evaluation or integration step produced NaN/Inf at time `t`.
    /// For chart-restricted systems (e.g. the polar billiard near the
    /// origin) this is how leaving the chart's validity region surfaces.
    NonFiniteField { t: f64 },
    /// Bisection could not localize a detected sign change.
    EventLocalization { t: f64 },
    /// The impact map failed (degenerate normal, solver divergence, ...).
    ResetFailed { t: f64, detail: String },
}

impl std::fmt::Display for ExecFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExecFailure::OutsideDomain { h } => {
                write!(f, "initial state outside domain (h = {h})")
            }
            ExecFailure::NonFiniteField { t } => {
                write!(
                    f,
                    "non-finite field evaluation at t = {t} (invalid chart point)"
                )
            }
            ExecFailure::EventLocalization { t } => {
                write!(f, "event localization failed near t = {t}")
            }
            ExecFailure::ResetFailed { t, detail } => {
                write!(f, "impact reset failed at t = {t}: {detail}")
            }
        }
    }
}
