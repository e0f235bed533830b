use std::path::PathBuf;

use stringstab_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Core(Error),

    #[error("degenerate frequency response at omega = {omega}: {source}")]
    Degenerate { omega: f64, source: Error },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { name, reason } => CliError::Config {
                field: name.to_string(),
                reason,
            },
            other => CliError::Core(other),
        }
    }
}

/// 0 ok, 1 I/O or other failure, 2 invalid config, 3 tuner found nothing
/// (reported by the command itself), 4 divergence, 5 degeneracy.
impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Degenerate { .. } => 5,
            CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                Error::InvalidParameter { .. } => 2,
                Error::Divergence { .. } => 4,
                Error::DivisionByZero { .. }
                | Error::NonFinite { .. }
                | Error::Degenerate { .. }
                | Error::Singular { .. } => 5,
                Error::EigenNoConvergence { .. } => 1,
            },
        }
    }
}
