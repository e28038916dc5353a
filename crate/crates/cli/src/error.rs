use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("line {line}, column `{column}`: {message}")]
    Cell { line: u64, column: String, message: String },

    #[error("{0}")]
    Csv(String),

    #[error("no column named `{0}`")]
    MissingColumn(String),

    #[error("column `{column}` is linearly dependent on {earlier}")]
    Rank { column: String, earlier: String },

    #[error(transparent)]
    Core(#[from] mmqr::Error),
}

impl CliError {
    /// Stable category printed on the error line.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Cell { .. } | CliError::Csv(_) => "csv",
            CliError::MissingColumn(_) => "missing-column",
            CliError::Rank { .. } => "rank",
            CliError::Core(e) => e.category(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), message: err.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
