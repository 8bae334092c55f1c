use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// A forward or backward pass produced NaN or infinity.
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}

/// Failures while decoding a checkpoint byte stream.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated tensor {0}")]
    TruncatedTensor(String),
    #[error("malformed config block: {0}")]
    BadConfig(String),
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("checkpoint inconsistent with its config: {0}")]
    Inconsistent(String),
    #[error("{0} trailing bytes after last tensor")]
    TrailingBytes(usize),
}
