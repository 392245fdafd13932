use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or unknown configuration. Carries the offending key path when known.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller violated an operation's precondition (shapes, arity, action types).
    #[error("contract error: {0}")]
    Contract(String),
    /// Evaluation protocol violation, e.g. adaptation counts overlapping training counts.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// Non-finite values in a forward pass, loss or gradient.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Serde(_) => 2,
            Error::Protocol(_) | Error::Contract(_) => 3,
            Error::Numeric(_) => 4,
            Error::Io { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
