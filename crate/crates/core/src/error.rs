use thiserror::Error;

/// Errors raised across the library. Validation failures carry the key path of
/// the offending field so that front ends can report it verbatim.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid specification at `{path}`: {message}")]
    InvalidSpec { path: String, message: String },

    #[error("degenerate window: {0}")]
    WindowDegenerate(String),

    #[error("sampling window does not contain the scaled domain (1/eps)D: {0}")]
    WindowTooSmall(String),

    #[error("epsilon {epsilon} exceeds the admissible threshold: {reason}")]
    EpsilonTooLarge { epsilon: f64, reason: String },

    #[error("partition requires a periodic lattice configuration, got {0}")]
    WrongProcessKind(String),

    #[error("configuration has no holes inside the domain")]
    EmptyConfiguration,

    #[error("moment <rho^{order}> is infinite for this radii distribution")]
    InfiniteMoment { order: f64 },

    #[error("inner radius {inner} must be nonnegative and smaller than outer radius {outer}")]
    InvalidAnnulus { inner: f64, outer: f64 },

    #[error("grid spacing {h} does not resolve radius {radius} (need at least 3 nodes across a diameter)")]
    UnderResolved { h: f64, radius: f64 },

    #[error("conjugate gradients did not converge: {iterations} iterations, relative residual {residual:e}")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("window smaller than one counting cube")]
    CubeTooLarge,

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("report is inconsistent: {0}")]
    CorruptReport(String),

    #[error("cancelled")]
    Cancelled,

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidSpec {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec { .. }
                | Error::WindowDegenerate(_)
                | Error::WindowTooSmall(_)
                | Error::EpsilonTooLarge { .. }
                | Error::WrongProcessKind(_)
                | Error::Parse { .. }
                | Error::GridMismatch(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
