use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("zero-power block")]
    ZeroPower,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("message length {len} exceeds max_len {max_len}")]
    MessageTooLong { len: usize, max_len: usize },

    #[error("metric `{0}` is not differentiable; use the reinforcement-learning regime (train_ssc_nd) instead")]
    NotDifferentiable(String),

    #[error("metric `{metric}` does not support {what}")]
    Unsupported { metric: String, what: String },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("output directory {0} already exists (use --force to overwrite)")]
    OutputExists(PathBuf),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("plot error: {0}")]
    Plot(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
