use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data not found: {}", .0.display())]
    MissingData(PathBuf),
    #[error("malformed input {}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] kancal_core::Error),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code: 2 for bad configs, 3 for missing data, 4 for a
    /// diverged run, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_)
            | CliError::Core(kancal_core::Error::InvalidConfig(_) | kancal_core::Error::InvalidSpline(_)) => 2,
            CliError::MissingData(_) => 3,
            CliError::Core(kancal_core::Error::Diverged { .. }) => 4,
            _ => 1,
        }
    }
}
