use std::path::PathBuf;

/// Errors produced by the feature-extraction toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Validation(String),

    #[error("convolution would produce no output: input length {len} is shorter than kernel {kernel}")]
    EmptyOutput { len: usize, kernel: usize },

    #[error("input too short: {what} needs at least {needed} samples, got {got}")]
    TooShort {
        what: String,
        needed: usize,
        got: usize,
    },

    #[error("weight shape mismatch for {tensor}: expected {expected:?}, found {actual:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("missing tensor {0:?} in weight archive")]
    MissingTensor(String),

    #[error("duplicate tensor name {0:?} in weight archive")]
    DuplicateName(String),

    #[error("bad archive magic: expected \"WFE1\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("archive truncated while reading {0}")]
    Truncated(String),

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("utterance is entirely silent")]
    AllSilent,

    #[error("cannot normalize a zero-length vector")]
    DegenerateVector,

    #[error("frame count mismatch between streams: {0:?}")]
    FrameCountMismatch(Vec<usize>),

    #[error("frame shift mismatch between streams: {0:?}")]
    FrameShiftMismatch(Vec<usize>),

    #[error("chunk of {chunk_len} samples is shorter than the receptive field of {receptive_field} samples")]
    ChunkTooShort {
        chunk_len: usize,
        receptive_field: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
