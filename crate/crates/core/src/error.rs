use thiserror::Error;

/// Errors raised by the compression library.
#[derive(Debug, Error)]
pub enum PeidError {
    /// A coordinate or linear index fell outside its range.
    #[error("index out of range: {0}")]
    Range(String),

    /// Inputs violate an operation's preconditions.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Product of mode sizes does not fit the linear index type.
    #[error("index space overflow for mode sizes {0:?}")]
    Overflow(Vec<usize>),

    /// A member expected in an ordered index set was absent.
    #[error("member {member} not found in index set")]
    NotFound { member: u128 },

    /// Pivot or oversample sets are not nested at a bond.
    #[error("nestedness violated at bond {bond}: member {member:?}")]
    Nestedness { bond: usize, member: Vec<usize> },

    /// A pivot file failed schema or consistency validation.
    #[error("invalid pivot data at bond {bond}: {message}")]
    Validation { bond: usize, message: String },

    /// A dense baseline was asked to materialize a tensor beyond its guard.
    #[error("refusing to materialize {entries} entries (limit {limit})")]
    SizeGuard { entries: u128, limit: u128 },

    /// Relative error with an all-zero reference on the sample set.
    #[error("relative error undefined: reference is zero on every sample")]
    UndefinedDenominator,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, PeidError>;

impl PeidError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        PeidError::Contract(msg.into())
    }

    /// Short machine-readable tag, used in CSV rows for failed runs.
    pub fn code(&self) -> &'static str {
        match self {
            PeidError::Range(_) => "range",
            PeidError::Contract(_) => "contract",
            PeidError::Overflow(_) => "overflow",
            PeidError::NotFound { .. } => "not-found",
            PeidError::Nestedness { .. } => "nestedness",
            PeidError::Validation { .. } => "validation",
            PeidError::SizeGuard { .. } => "size-guard",
            PeidError::UndefinedDenominator => "undefined-denominator",
            PeidError::Config(_) => "config",
            PeidError::Io(_) => "io",
            PeidError::Json(_) => "json",
            PeidError::Csv(_) => "csv",
        }
    }
}
