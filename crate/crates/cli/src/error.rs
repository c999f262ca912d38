use std::path::PathBuf;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// A check ran to completion and did not pass, or a non-numerical runtime failure.
    pub const FAILED: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DIVERGED: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}:{line}:{column}: {message}", path.display())]
    Config {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{0}")]
    Usage(String),

    #[error("{command}: {source}")]
    Core {
        command: &'static str,
        #[source]
        source: sips_core::Error,
    },

    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Usage(_) => exit::CONFIG,
            Self::Core {
                source:
                    sips_core::Error::Diverged { .. } | sips_core::Error::TrainingDiverged { .. },
                ..
            } => exit::DIVERGED,
            Self::Core { .. } | Self::Io { .. } => exit::FAILED,
        }
    }
}

/// Tags core errors with the subcommand that raised them.
pub(crate) trait Context<T> {
    fn during(self, command: &'static str) -> Result<T, CliError>;
}

impl<T> Context<T> for sips_core::Result<T> {
    fn during(self, command: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { command, source })
    }
}
