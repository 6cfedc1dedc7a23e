//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by the engine, dataset, training, and retrieval layers.
#[derive(Error, Debug)]
pub enum SanError {
    /// Invalid configuration: bad dimensions, negative weights, out-of-range knobs.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Matrix/network dimension mismatch.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    /// Inconsistent internal state (e.g. a forward trace that does not match the net).
    #[error("state error: {0}")]
    State(String),

    /// A non-finite value (NaN/Inf) was produced or ingested.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Dataset-level problem: missing class, missing domain, empty gallery.
    #[error("data error: {0}")]
    Data(String),

    /// File does not start with the expected magic bytes.
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    /// File version not supported by this build.
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    /// File ended before the declared content was read.
    #[error("truncated file: {0}")]
    Truncated(String),

    /// Stored CRC32 does not match the recomputed one.
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    /// A required earlier artifact (checkpoint, split) is missing or incompatible.
    #[error("missing prerequisite: {0}")]
    Prerequisite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl SanError {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        SanError::Shape {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SanError>;
