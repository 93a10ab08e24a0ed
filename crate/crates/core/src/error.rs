use thiserror::Error;

/// Errors raised by the numeric engine and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} outside the schedule domain [0, 1]")]
    Domain { t: f64 },
    #[error("log-SNR undefined at t = {t}: sigma = {sigma:e} is below the floor")]
    EndpointSingularity { t: f64, sigma: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("stage error: {0}")]
    Stage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numerical(_) | Error::EndpointSingularity { .. } => 3,
            Error::Verification(_) => 4,
            Error::Io(_) | Error::Csv(_) => 5,
            _ => 1,
        }
    }
}
