use texlab_core::Error;

/// Failure classes with distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("not found: {0}")]
    NotFound(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::NotFound(_) => 4,
        }
    }

    /// Core error with the command that raised it.
    pub fn from_core(command: &str, e: Error) -> CliError {
        let msg = format!("{command}: {e}");
        match e {
            Error::NotFound { .. } => CliError::NotFound(msg),
            Error::Domain(_)
            | Error::Table(_)
            | Error::MissingKey(_)
            | Error::PressureOutOfRange { .. }
            | Error::Format(_)
            | Error::Spectrum(_)
            | Error::Unnormalized
            | Error::AxisMismatch(..)
            | Error::Io(_) => CliError::Config(msg),
            Error::MatsubaraNonConvergence { .. }
            | Error::GapNonConvergence { .. }
            | Error::NegativeRadicand { .. }
            | Error::Unconverged { .. }
            | Error::NonPositiveArea(_)
            | Error::NoEdge
            | Error::NonMonotoneMap { .. }
            | Error::Degenerate { .. }
            | Error::AmbiguousBranch { .. } => CliError::Numerical(msg),
        }
    }
}
