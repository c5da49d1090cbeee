use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value for `{0}`")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("enumeration of {size} allocations exceeds the limit of {limit}")]
    EnumerationTooLarge { size: u128, limit: u128 },

    #[error("linear solve failed: matrix is not positive definite (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}

impl Error {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFinite(_) => "non_finite",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::EmptyInput(_) => "empty_input",
            Error::EnumerationTooLarge { .. } => "enumeration_too_large",
            Error::IllConditioned { .. } => "ill_conditioned",
            Error::NonFiniteObjective { .. } => "non_finite_objective",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }

    /// The offending field or parameter, when there is one.
    pub fn field(&self) -> Option<&str> {
        match self {
            Error::NonFinite(name) => Some(name),
            Error::InvalidParameter { name, .. } => Some(name),
            Error::Config { field, .. } => Some(field),
            _ => None,
        }
    }
}
