use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dt = {dt:e} exceeds the explicit stability bound {bound:e}")]
    Stability { dt: f64, bound: f64 },

    #[error("instability at t = {time}: density reached {value:e} before clipping")]
    Instability { time: f64, value: f64 },

    #[error("quadrature resolution too coarse: {0}")]
    Resolution(String),

    #[error("all {0} samples fall outside the grid domain")]
    EmptySupport(usize),

    #[error("samples have zero variance along axis {0}")]
    DegenerateSample(usize),

    #[error("kernel is not finite at ({x:?}, {y:?}); enlarge the diagonal band")]
    KernelSingularity { x: Vec<f64>, y: Vec<f64> },

    #[error("kernel positivity violated at ({x:?}, {y:?})")]
    KernelPositivity { x: Vec<f64>, y: Vec<f64> },

    #[error("state diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("time reversal undefined at {state:?}: density below floor")]
    ReversalUndefined { state: Vec<f64> },

    #[error("path fingerprint {found} does not match spec fingerprint {expected}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("discard fraction {0:.4} is at or above the 5% limit")]
    DiscardFraction(f64),

    #[error("density is not stationary: residual {residual:e} >= threshold {threshold:e}")]
    NonStationary { residual: f64, threshold: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Usage-type failures (bad input, unreadable files) as opposed to
    /// numerical failures of a well-posed run.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::InvalidArgument(_)
                | Error::Parse(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::FingerprintMismatch { .. }
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Assumption(_) => "assumption",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Stability { .. } => "stability",
            Error::Instability { .. } => "instability",
            Error::Resolution(_) => "resolution",
            Error::EmptySupport(_) => "empty_support",
            Error::DegenerateSample(_) => "degenerate_sample",
            Error::KernelSingularity { .. } => "kernel_singularity",
            Error::KernelPositivity { .. } => "kernel_positivity",
            Error::Divergence { .. } => "divergence",
            Error::ReversalUndefined { .. } => "reversal_undefined",
            Error::FingerprintMismatch { .. } => "fingerprint_mismatch",
            Error::DiscardFraction(_) => "discard_fraction",
            Error::NonStationary { .. } => "non_stationary",
            Error::Unsupported(_) => "unsupported",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
