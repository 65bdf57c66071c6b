use thiserror::Error;

/// Errors produced by the library.
///
/// The variants map onto the failure classes the CLI reports through its
/// exit codes: validation problems in user-supplied data or configuration,
/// numerical failures inside the linear algebra or the sampler, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input data, dimensions, or configuration.
    #[error("validation: {0}")]
    Validation(String),

    /// A matrix factorization or sampler block failed numerically.
    #[error("numerical: {0}")]
    Numerical(String),

    /// Malformed input file, with a line number where available.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Unknown key in a configuration file.
    #[error("unknown config key `{0}`")]
    UnknownConfigKey(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
