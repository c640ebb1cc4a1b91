use std::fmt;

/// Command failures grouped by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Invalid flags or configuration values; exit 2.
    Usage(String),
    /// Unreadable, unwritable or malformed files; exit 1.
    File(neuron_core::Error),
    /// Any other pipeline failure; exit 1.
    Run(neuron_core::Error),
    /// A self-check that ran but did not pass; exit 1.
    Check(String),
}

impl CliError {
    pub fn usage(e: impl fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

impl From<neuron_core::Error> for CliError {
    fn from(e: neuron_core::Error) -> Self {
        use neuron_core::Error as E;
        match e {
            E::Io { .. } | E::Json { .. } | E::Format { .. } => CliError::File(e),
            E::Config(msg) => CliError::Usage(msg),
            other => CliError::Run(other),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::File(e) | CliError::Run(e) => write!(f, "{e}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}
