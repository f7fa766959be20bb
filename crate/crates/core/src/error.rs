use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Sparsity outside `[0, 1)`.
    InvalidSparsity(f64),
    InvalidConfig(String),
    /// A removal or growth request larger than the candidate pool.
    CountExceeded {
        requested: usize,
        available: usize,
        what: &'static str,
    },
    ShapeMismatch {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    NonFinite(String),
    UnknownTensor(usize),
    Corpus(String),
    Format(String),
    ChecksumMismatch,
    VocabMismatch(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidSparsity(s) => write!(f, "sparsity {s} is outside [0, 1)"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::CountExceeded {
                requested,
                available,
                what,
            } => write!(
                f,
                "requested {requested} {what} but only {available} are available"
            ),
            Error::ShapeMismatch {
                what,
                expected,
                found,
            } => write!(
                f,
                "shape mismatch for {what}: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::NonFinite(ctx) => write!(f, "non-finite value: {ctx}"),
            Error::UnknownTensor(id) => write!(f, "unknown tensor id {id}"),
            Error::Corpus(msg) => write!(f, "corpus error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::ChecksumMismatch => write!(f, "checkpoint checksum mismatch"),
            Error::VocabMismatch(msg) => write!(f, "vocabulary mismatch: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
