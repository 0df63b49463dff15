use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("point ({x}, {y}, {z}) lies outside the volume bounds")]
    OutOfBounds { x: f64, y: f64, z: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("malformed camera matrix: {0}")]
    MalformedMatrix(String),

    #[error("inconsistent resolution: {0}")]
    InconsistentResolution(String),

    #[error("unsupported or corrupt file format: {0}")]
    Format(String),

    #[error("oracle budget exceeded: estimated {estimate} evaluations, limit {limit}")]
    Budget { estimate: u64, limit: u64 },

    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged {
        iteration: usize,
        detail: String,
        checkpoint: Option<PathBuf>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end. Codes are stable and
    /// documented in the README.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Contract(_) | Error::Dimension(_) => 3,
            Error::OutOfBounds { .. } => 3,
            Error::Io { .. } | Error::MissingFile(_) => 4,
            Error::MalformedMatrix(_) | Error::InconsistentResolution(_) | Error::Format(_) => 5,
            Error::NonFinite(_) | Error::Diverged { .. } => 6,
            Error::Budget { .. } => 7,
        }
    }
}
