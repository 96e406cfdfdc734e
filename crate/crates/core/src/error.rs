use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("zero vector cannot be normalized")]
    ZeroVector,
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dataset has no labels")]
    MissingLabels,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("class {class} has {found} usable samples, need at least {required}")]
    InsufficientSamples {
        class: usize,
        found: usize,
        required: usize,
    },
    #[error("training data must contain at least two classes")]
    SingleClass,
    #[error("degenerate tail: all tail values are equal")]
    DegenerateTail,
    #[error("root finder did not converge: {0}")]
    NoConvergence(String),
    #[error("tape does not match network shape")]
    StaleTape,
    #[error("report axes differ: {0}")]
    AxisMismatch(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Failures caused by the numbers themselves rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite
                | Error::ZeroVector
                | Error::NotPositiveDefinite { .. }
                | Error::DegenerateTail
                | Error::NoConvergence(_)
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
