use std::path::Path;

/// Failures of the command-line layer.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: u64, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] maxstable::Error),
}

impl AppError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io { path: path.display().to_string(), source }
    }

    pub fn csv(path: &Path, e: csv::Error) -> Self {
        AppError::Invalid(format!("{}: {e}", path.display()))
    }

    /// Process exit code: 1 for bad input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        use maxstable::Error as E;
        match self {
            AppError::Parse { .. } | AppError::Invalid(_) => 1,
            AppError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 1,
            AppError::Io { .. } => 2,
            AppError::Model(E::Parameter { .. } | E::Domain { .. } | E::Input(_) | E::DegenerateLocation { .. }) => 1,
            AppError::Model(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
