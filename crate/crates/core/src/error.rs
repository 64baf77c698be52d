use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at layer {layer}: {detail}")]
    NumericLayer { layer: usize, detail: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("contract violated: {0}")]
    Contract(String),
}

impl Error {
    /// True for failures caused by arithmetic blowing up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::NumericLayer { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
