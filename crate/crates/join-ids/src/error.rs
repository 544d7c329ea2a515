//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Timestamp order violated (duplicate or decreasing arrival index).
    Ordering(String),
    /// Attribute/schema mismatch: wrong arity, unknown attribute, value out of domain.
    Schema(String),
    /// Invalid configuration (empty candidate list, bad bucket count, ...).
    Config(String),
    /// Operation called on an object in the wrong imputation state.
    State(String),
    /// A shrink-only update tried to grow a bounding box.
    Containment(String),
    /// Possible-world enumeration would exceed the configured cap.
    WorldCap { worlds: u128, cap: u128 },
    Parse(String),
    Io(std::io::Error),
    Csv(csv::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Ordering(msg) => write!(f, "ordering error: {msg}"),
            Error::Schema(msg) => write!(f, "schema error: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::State(msg) => write!(f, "state error: {msg}"),
            Error::Containment(msg) => write!(f, "containment error: {msg}"),
            Error::WorldCap { worlds, cap } => {
                write!(f, "combinatorial blowup: {worlds} possible worlds exceed cap {cap}")
            }
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Csv(e) => write!(f, "csv error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Csv(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e)
    }
}
