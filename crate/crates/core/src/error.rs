use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("step {step} at t = {t}: {message}")]
    StepFailed { step: usize, t: f64, message: String },
    #[error("io error on {path}: {cause}")]
    Io { path: String, cause: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, cause: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), cause }
    }
}
