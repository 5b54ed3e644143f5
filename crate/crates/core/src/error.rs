use std::io;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Each variant belongs to one of three classes (see [`ErrorClass`]) which the
/// command-line driver maps onto stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {layer}: expected {expected:?}, got {actual:?}")]
    Shape {
        layer: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("insufficient samples for class {class}: need {needed}, have {available}")]
    InsufficientSamples {
        class: usize,
        needed: usize,
        available: usize,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad configuration, flags or arguments (exit code 2).
    Config,
    /// Unreadable, malformed or insufficient data (exit code 3).
    Data,
    /// Numeric or runtime failure (exit code 4).
    Runtime,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Runtime => 4,
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::Architecture(_) => {
                ErrorClass::Config
            }
            Error::Format(_)
            | Error::Data(_)
            | Error::InsufficientSamples { .. }
            | Error::EmptyDataset
            | Error::Io(_)
            | Error::Csv(_) => ErrorClass::Data,
            Error::Json(e) if e.is_data() || e.is_syntax() => ErrorClass::Config,
            Error::Json(_) | Error::Shape { .. } | Error::NonFinite(_) => ErrorClass::Runtime,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class().exit_code()
    }

    pub(crate) fn shape(layer: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            layer: layer.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
