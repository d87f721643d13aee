use thiserror::Error;

/// Errors raised by every fallible operation in the crate.
///
/// `Validation` and `Format` describe bad inputs and map to CLI exit code 2;
/// the remaining variants are failures during computation or I/O (exit 1).
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Format(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_) | Error::Format(_))
    }

    /// Process exit code: 2 for invalid input, 1 for compute or I/O failure.
    pub fn exit_code(&self) -> i32 {
        if self.is_validation() {
            2
        } else {
            1
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Returns a validation error unless `cond` holds.
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Validation(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
