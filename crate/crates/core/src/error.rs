use thiserror::Error;

/// Every failure the library reports.
///
/// The variants map one-to-one onto the command-line exit codes
/// (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration: missing columns, malformed config files, invalid options.
    #[error("configuration error: {0}")]
    Config(String),
    /// The input data violates a requirement (unmapped codes, empty result, ...).
    #[error("data error: {0}")]
    Data(String),
    /// An operation was called on input that does not satisfy its precondition.
    #[error("precondition failed: {0}")]
    Precondition(String),
    /// The design matrix is rank deficient.
    #[error("singular design: {0}")]
    SingularDesign(String),
    /// A test statistic cannot be formed (zero standard error, all strata degenerate).
    #[error("degenerate test: {0}")]
    Degenerate(String),
    /// An iterative procedure diverged or failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) => 1,
            Error::Data(_) | Error::Precondition(_) | Error::Degenerate(_) => 2,
            Error::SingularDesign(_) | Error::Numerical(_) => 3,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
