use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the recognizer pipeline.
///
/// One enum for the whole crate keeps the C ABI error codes stable; see
/// [`Error::code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("signal is shorter than one analysis window ({len} < {window} samples)")]
    EmptySignal { len: usize, window: usize },

    #[error("utterance needs at least {needed} frames, got {got}")]
    DegenerateUtterance { needed: usize, got: usize },

    #[error("signal power is zero; SNR is undefined")]
    ZeroPowerSignal,

    #[error("anchor points are degenerate (collinear); affine normalization is singular")]
    SingularAlignment,

    #[error("need more than one observation to fit, got {0}")]
    InsufficientData(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("offset {offset} frames is not smaller than sequence length {len}")]
    OffsetTooLarge { offset: i64, len: usize },

    #[error("cached activations do not belong to these parameters or inputs")]
    CacheMismatch,

    #[error("gradient contains non-finite values")]
    NonFiniteGradient,

    #[error("label sequence of length {labels} ({repeats} adjacent repeats) cannot be aligned to {frames} frames")]
    InfeasibleLabelSequence {
        labels: usize,
        repeats: usize,
        frames: usize,
    },

    #[error("enumeration of {paths} paths exceeds the limit of {limit}")]
    InstanceTooLarge { paths: f64, limit: f64 },

    #[error("transducer alphabets do not match: output side has {left} symbols, input side has {right}")]
    AlphabetMismatch { left: usize, right: usize },

    #[error("no complete path through the decoding graph")]
    NoPathFound,

    #[error("reference sequence is empty")]
    EmptyReference,

    #[error("phoneme '{0}' has no viseme assignment")]
    IncompleteMap(String),

    #[error("no matched peak pairs to aggregate")]
    NoMatchedPairs,

    #[error("{}:{line}: {msg}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(file: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Stable numeric code, shared with the C interface. Zero is reserved
    /// for success.
    pub fn code(&self) -> i32 {
        match self {
            Error::EmptySignal { .. } => 1,
            Error::DegenerateUtterance { .. } => 2,
            Error::ZeroPowerSignal => 3,
            Error::SingularAlignment => 4,
            Error::InsufficientData(_) => 5,
            Error::DimensionMismatch { .. } => 6,
            Error::LengthMismatch { .. } => 7,
            Error::OffsetTooLarge { .. } => 8,
            Error::CacheMismatch => 9,
            Error::NonFiniteGradient => 10,
            Error::InfeasibleLabelSequence { .. } => 11,
            Error::InstanceTooLarge { .. } => 12,
            Error::AlphabetMismatch { .. } => 13,
            Error::NoPathFound => 14,
            Error::EmptyReference => 15,
            Error::IncompleteMap(_) => 16,
            Error::NoMatchedPairs => 17,
            Error::Parse { .. } => 18,
            Error::InvalidInput(_) => 19,
            Error::Io(_) => 20,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
