use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A synthetic generator spec or CLI flag violates its invariants.
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("no usable samples: {0}")]
    EmptyData(String),

    #[error("non-finite loss at step {step} (lr {lr:e}): {components}")]
    NonFiniteLoss {
        step: u64,
        lr: f64,
        components: String,
    },

    #[error("checkpoint architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error(transparent)]
    Fseq(#[from] FseqError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::Shape {
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}

/// Failures while decoding an FSEQ file.
#[derive(Debug, Error, PartialEq)]
pub enum FseqError {
    #[error("bad magic: not an FSEQ file")]
    BadMagic,
    #[error("unsupported FSEQ version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("invalid dimensions {0:?}: every dimension must be at least 1")]
    InvalidDimensions([u32; 4]),
    #[error("invalid capacity {0}")]
    InvalidCapacity(f32),
    #[error("dt_label is not valid UTF-8")]
    BadLabel,
    #[error("payload size mismatch: expected {expected} bytes, found {actual}")]
    PayloadSizeMismatch { expected: usize, actual: usize },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}
