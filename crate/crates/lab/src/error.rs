use std::fmt::Display;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type LabResult<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("{}: missing or unreadable ({message})", path.display())]
    Missing { path: PathBuf, message: String },
    #[error("{}: corrupt ({message})", path.display())]
    Corrupt { path: PathBuf, message: String },
    #[error("{}: write failed ({message})", path.display())]
    Io { path: PathBuf, message: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    /// A training or evaluation step produced a non-finite or degenerate value.
    #[error("numeric failure: {0}")]
    Numeric(ecc_core::Error),
    #[error(transparent)]
    Core(ecc_core::Error),
}

impl LabError {
    pub fn missing(path: &Path, e: impl Display) -> Self {
        LabError::Missing {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub fn corrupt(path: &Path, e: impl Display) -> Self {
        LabError::Corrupt {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub fn io(path: &Path, e: impl Display) -> Self {
        LabError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

impl From<ecc_core::Error> for LabError {
    fn from(e: ecc_core::Error) -> Self {
        if e.is_numeric() {
            LabError::Numeric(e)
        } else {
            LabError::Core(e)
        }
    }
}
