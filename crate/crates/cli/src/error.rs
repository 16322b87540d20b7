//! Error wrapper that fixes the process exit code for each failure class.

use std::fmt;

use distillery_core::Error as CoreError;

/// Exit codes: 2 for configuration or input problems, 3 for numerical
/// aborts, 4 for verification (gradient-check) failures.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Verification(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Verification(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "{m}"),
            CliError::Verification(m) => write!(f, "{m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        match err {
            CoreError::NonFinite(_) | CoreError::NumericalAbort { .. } => {
                CliError::Numerical(err.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

/// IO failures count as input errors.
pub fn io_err(path: &std::path::Path, err: std::io::Error) -> CliError {
    CliError::Config(format!("io error on {}: {err}", path.display()))
}
