use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("atom {index} is degenerate (norm {norm:e})")]
    DegenerateAtom { index: usize, norm: f64 },

    #[error("sparse coding diverged after {iteration} iterations (Lipschitz estimate {lipschitz:e})")]
    Divergence { iteration: usize, lipschitz: f64 },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn domain_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
