use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The study document does not match the schema.
    #[error("parse error: {0}")]
    Parse(String),

    /// The document parsed but violates a structural invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A numeric argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Not enough information to resolve a required quantity (e.g. sigma^2).
    #[error("unresolvable input: {0}")]
    Unresolvable(String),

    /// Vertex enumeration would exceed the supported box dimension.
    #[error("enumeration bound exceeded: {0}")]
    EnumerationBound(String),

    #[error("no convergence: {0}")]
    Convergence(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Unresolvable(_) => 2,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
