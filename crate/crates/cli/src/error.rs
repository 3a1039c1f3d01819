use std::fmt;

/// Maps onto the process exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Exit 2.
    Config(String),
    /// Exit 3.
    Data(String),
    /// Exit 4.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    /// Prefixes the message with a stage name.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{stage}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{stage}: {m}")),
            CliError::Internal(m) => CliError::Internal(format!("{stage}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub fn data(e: impl fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

pub fn internal(e: impl fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}
