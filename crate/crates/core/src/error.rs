use alloc::string::String;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("singular input: {0}")]
    Singular(String),
    #[error("numeric overflow at step {step}: {what}")]
    NumericOverflow { step: usize, what: String },
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("scale limit exceeded: {0}")]
    ScaleLimit(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::InvalidInput(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
