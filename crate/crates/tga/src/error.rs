use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor math, models, attacks, metrics, and file I/O.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not conform to the operation's rule.
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    /// An argument violates the operation's documented domain.
    Domain {
        op: &'static str,
        reason: String,
    },
    /// `backward` was called on an output with no differentiable path to any leaf.
    DetachedOutput,
    /// `backward` was called on a non-scalar output.
    NonScalarOutput { shape: Vec<usize> },
    /// A computation produced or was handed a NaN/Inf where finiteness is required.
    NonFinite { context: String },
    /// A token outside the prompt vocabulary.
    UnknownToken { token: String },
    /// An operation received an empty collection it cannot work with.
    EmptyInput(&'static str),
    /// A class label outside `0..classes`.
    LabelOutOfRange { label: usize, classes: usize },
    /// Attention-map tags (kind/source/input) do not match the operation's contract.
    TagMismatch { reason: String },
    /// Configuration parse or constraint failure.
    Config { reason: String },
    /// A persisted file failed validation (magic, version, CRC, truncation).
    Format { path: String, reason: String },
    /// Wrapper around I/O failures.
    Io { path: String, message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, expected, got } => {
                write!(f, "{op}: shape mismatch, expected {expected}, got {got}")
            }
            Error::Domain { op, reason } => write!(f, "{op}: {reason}"),
            Error::DetachedOutput => {
                write!(f, "backward: output is detached from the graph (no differentiable leaves)")
            }
            Error::NonScalarOutput { shape } => {
                write!(f, "backward: output must be a scalar, got shape {shape:?}")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::UnknownToken { token } => write!(f, "unknown token: {token}"),
            Error::EmptyInput(what) => write!(f, "{what} must be non-empty"),
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::TagMismatch { reason } => write!(f, "attention-map tag mismatch: {reason}"),
            Error::Config { reason } => write!(f, "config error: {reason}"),
            Error::Format { path, reason } => write!(f, "{path}: {reason}"),
            Error::Io { path, message } => write!(f, "{path}: {message}"),
        }
    }
}

impl std::error::Error for Error {}

impl Error {
    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
