use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid geometry in {op}: {detail}")]
    Geometry { op: &'static str, detail: String },

    #[error("invalid parameter {name}: {detail}")]
    Parameter { name: &'static str, detail: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("category {category} exceeds the maximum of {max} categories")]
    CategoryOverflow { category: u32, max: usize },

    #[error("non-finite value in {context}: {detail}")]
    NonFinite { context: String, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad classes used to map errors onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Usage(_) | Error::Parameter { .. } => ErrorClass::Usage,
            Error::NonFinite { .. } => ErrorClass::Numeric,
            Error::Dimension { .. }
            | Error::Geometry { .. }
            | Error::CategoryOverflow { .. }
            | Error::Io { .. }
            | Error::Format { .. } => ErrorClass::Data,
        }
    }

    /// Short machine-readable kind tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Geometry { .. } => "geometry",
            Error::Parameter { .. } => "parameter",
            Error::Usage(_) => "usage",
            Error::CategoryOverflow { .. } => "category_overflow",
            Error::NonFinite { .. } => "non_finite",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
        }
    }

    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn geometry(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Geometry {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn param(name: &'static str, detail: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
