use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("point outside the chart domain: {0}")]
    ChartDomain(String),
    #[error("degenerate: {0}")]
    Degenerate(String),
    #[error("flow step failed: {0}")]
    FlowStep(String),
    #[error("left the normal region: {0}")]
    RegionExit(String),
    #[error("no convergence: {0}")]
    Convergence(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("refusing to overwrite {0} (use --force)")]
    Exists(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) | Error::Exists(_) | Error::Io { .. } => 2,
            Error::Convergence(_)
            | Error::ChartDomain(_)
            | Error::Degenerate(_)
            | Error::FlowStep(_)
            | Error::RegionExit(_) => 3,
            Error::Verification(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
