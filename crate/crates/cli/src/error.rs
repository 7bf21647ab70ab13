use aecz_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 0 success, 2 configuration, 3 data, 4 numerical, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Dimension { .. } => 2,
                Error::Parse { .. } | Error::Data(_) | Error::Format(_) | Error::Io { .. } => 3,
                Error::NonFinite(_) => 4,
                Error::State(_) => 1,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
