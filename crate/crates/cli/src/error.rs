use thiserror::Error;

/// Failures of a CLI command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("constrained decoding failed on {failed_pct:.2}% of sentences in {setting} (threshold {threshold:.2}%)")]
    FailureThreshold { setting: String, failed_pct: f64, threshold: f64 },
    #[error("{0}")]
    Check(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: lexcon_core::Error,
    },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use lexcon_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::FailureThreshold { .. } => 4,
            CliError::Check(_) => 1,
            CliError::Core { source, .. } => match source {
                E::Config(_) => 2,
                E::Data(_) | E::Io(_) | E::Json(_) => 3,
                E::ConstraintFailure { .. } => 4,
                E::Diverged { .. } | E::Refused(_) => 1,
            },
        }
    }
}

/// Attach a stage description to a core error.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T> Context<T> for lexcon_core::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|source| CliError::Core { context: what(), source })
    }
}

impl<T> Context<T> for std::io::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| CliError::Core { context: what(), source: e.into() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Data("x".into()).exit_code(), 3);
        let t = CliError::FailureThreshold { setting: "s".into(), failed_pct: 5.0, threshold: 1.0 };
        assert_eq!(t.exit_code(), 4);
        let io: std::io::Result<()> = Err(std::io::Error::other("gone"));
        assert_eq!(io.context(|| "reading".into()).unwrap_err().exit_code(), 3);
    }
}
