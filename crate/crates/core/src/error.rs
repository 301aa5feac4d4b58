use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("{op}: non-finite value encountered: {detail}")]
    NonFinite { op: &'static str, detail: String },

    #[error("bad magic bytes in {kind} file (expected {expected:?}, found {found:?})")]
    BadMagic {
        kind: &'static str,
        expected: String,
        found: String,
    },

    #[error("unsupported {kind} version {found} (supported: {supported})")]
    UnsupportedVersion {
        kind: &'static str,
        found: u16,
        supported: u16,
    },

    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLengthMismatch { expected: usize, found: usize },

    #[error("malformed {kind}: {detail}")]
    Malformed { kind: &'static str, detail: String },

    #[error("config line {line}: {detail}")]
    Config { line: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by input files or data rather than arguments or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::BadMagic { .. }
                | Error::UnsupportedVersion { .. }
                | Error::PayloadLengthMismatch { .. }
                | Error::Malformed { .. }
                | Error::Io { .. }
        )
    }

    pub fn is_numeric_error(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}
