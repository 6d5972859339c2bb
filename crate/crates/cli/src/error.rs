use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] stable_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error("configuration: {0}")]
    Config(String),

    #[error("effective sample size {n_eff:.1} is below the floor of {floor}")]
    EffectiveSampleSize { n_eff: f64, floor: f64 },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn format(path: &std::path::Path, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.display().to_string(),
            message: message.into(),
        }
    }

    /// Process exit status: 2 for invalid input, 3 for numerical
    /// failure, 4 for unusable reweighting.
    pub fn exit_code(&self) -> i32 {
        use stable_core::Error as E;
        match self {
            CliError::Core(E::NonFinite(_) | E::Diverged(_)) => 3,
            CliError::Core(E::ReweightDegenerate(_)) | CliError::EffectiveSampleSize { .. } => 4,
            _ => 2,
        }
    }
}
