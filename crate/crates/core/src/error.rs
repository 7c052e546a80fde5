use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A configuration or parameter value violates its contract.
    #[error("invalid `{field}`: {message}")]
    Config { field: String, message: String },

    /// The requested system is larger than the enumeration cap.
    #[error("N = {n} exceeds the enumeration cap of {cap}")]
    CapExceeded { n: u32, cap: u32 },

    #[error("{0}")]
    Invalid(String),

    #[error("estimates from different estimators cannot be merged ({0} vs {1})")]
    MismatchedEstimators(String, String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
