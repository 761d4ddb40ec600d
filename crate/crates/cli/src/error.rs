use std::fmt;

/// Command failures, classified by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config files, paths or incompatible checkpoints (exit 2).
    Config(String),
    /// Malformed input data (exit 3).
    Data(String),
    /// Divergence, non-finite values or ill-conditioned matrices (exit 4).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<rwsgd::Error> for CliError {
    fn from(e: rwsgd::Error) -> Self {
        use rwsgd::Error as E;
        if e.is_numerical() {
            return CliError::Numerical(e.to_string());
        }
        match e {
            // Ingestion errors travel through the engine boxed; recover them.
            E::Source(inner) => match inner.downcast::<CliError>() {
                Ok(cli) => *cli,
                Err(other) => CliError::Data(other.to_string()),
            },
            E::DimensionMismatch { .. } | E::InvalidLabel(_) | E::EmptyStream => {
                CliError::Data(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}
