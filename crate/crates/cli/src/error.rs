use std::fmt;
use std::process::ExitCode;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration (exit 1).
    Usage(String),
    /// Missing, malformed or inconsistent data, or I/O failure (exit 2).
    Data(String),
    /// A fit or reconstruction did not converge; outputs are kept (exit 3).
    NoConvergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::NoConvergence(_) => 3,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::NoConvergence(m) => write!(f, "not converged: {m}"),
        }
    }
}

impl From<qdpair::Error> for CliError {
    fn from(e: qdpair::Error) -> Self {
        match e {
            qdpair::Error::InvalidInput(_) => CliError::Usage(e.to_string()),
            qdpair::Error::Fit(_) => CliError::NoConvergence(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
