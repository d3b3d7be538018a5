use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Model(mlcsc::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
            _ => 1,
        }
    }

    /// Classifies a library error raised while reading or preprocessing input data.
    pub fn data(err: mlcsc::Error) -> Self {
        match err {
            mlcsc::Error::Divergence { .. } | mlcsc::Error::NonFinite(_) => {
                CliError::Divergence(err.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<mlcsc::Error> for CliError {
    fn from(err: mlcsc::Error) -> Self {
        match err {
            mlcsc::Error::Divergence { .. } | mlcsc::Error::NonFinite(_) => {
                CliError::Divergence(err.to_string())
            }
            other => CliError::Model(other),
        }
    }
}
