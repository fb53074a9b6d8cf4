use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {what} (expected {expected}, got {actual})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("mask selects no positions")]
    EmptyMask,
    #[error("mask is not a prefix of real tokens followed by padding")]
    NonPrefixMask,
    #[error("instance too large for enumeration: {labels}^{positions} label sequences")]
    TooLarge { labels: usize, positions: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("no embedding for key `{0}`")]
    MissingEmbedding(String),
    #[error("decoder parameters are not fitted")]
    Unfitted,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("optimization diverged: {0}")]
    Divergence(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("record `{id}` failed validation: {violations:?}")]
    Validation { id: String, violations: Vec<String> },
    #[error("bad file format: {0}")]
    Format(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checksum mismatch; file is corrupt or truncated")]
    Checksum,
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Errors caused by numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Divergence(_))
    }

    /// Errors caused by data that failed parsing or validation.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation { .. }
                | Error::Format(_)
                | Error::Version { .. }
                | Error::Checksum
                | Error::MissingEmbedding(_)
                | Error::Shape(_)
                | Error::LengthMismatch { .. }
                | Error::EmptyDataset
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
