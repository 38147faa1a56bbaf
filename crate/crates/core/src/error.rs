use std::fmt;

/// Errors produced by the engine.
#[derive(Debug)]
pub enum Error {
    /// Matrix shapes incompatible for the attempted operation.
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
        op: &'static str,
    },
    /// A parameter violated its documented constraint.
    Parameter { name: &'static str, message: String },
    /// Invalid input data (token ids, sequence lengths).
    Input(String),
    /// Inconsistent runtime state (cache/schedule/trace disagreement).
    State(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// Malformed binary file (bad magic, truncation, version).
    Format(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch { left, right, op } => write!(
                f,
                "{op}: incompatible shapes {}x{} and {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Self::Parameter { name, message } => write!(f, "invalid parameter `{name}`: {message}"),
            Self::Input(msg) => write!(f, "invalid input: {msg}"),
            Self::State(msg) => write!(f, "inconsistent state: {msg}"),
            Self::Io(err) => write!(f, "i/o error: {err}"),
            Self::Format(msg) => write!(f, "malformed file: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Self::Io(err)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parameter(name: &'static str, message: impl Into<String>) -> Self {
        Self::Parameter {
            name,
            message: message.into(),
        }
    }
}
