use thiserror::Error;

/// Errors raised by the quadrature library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("degenerate weights: every point has zero target density")]
    DegenerateWeights,

    #[error("singular gradient: coincident points under the Coulomb kernel")]
    SingularGradient,

    #[error("MMD requires bounded kernel")]
    UnboundedKernel,

    #[error("singular kernel: {0}")]
    SingularKernel(String),

    #[error("analytic form unavailable for d = {0}")]
    AnalyticFormUnavailable(usize),

    #[error("invalid initial configuration: {0}")]
    InvalidInitialConfiguration(String),

    #[error("target escapes equilibrium support: support radius {support} > {radius}")]
    TargetEscapesSupport { support: f64, radius: f64 },

    #[error("need at least 2 replicates, got {0}")]
    TooFewReplicates(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for errors that come from malformed input rather than from a
    /// numerical breakdown during a run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Parse(_)
                | Error::InvalidParameter(_)
                | Error::DimensionMismatch { .. }
                | Error::AnalyticFormUnavailable(_)
                | Error::TargetEscapesSupport { .. }
                | Error::SingularKernel(_)
                | Error::UnboundedKernel
                | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
