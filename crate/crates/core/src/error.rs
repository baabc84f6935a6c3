use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("mesh is not watertight: first ambiguous cell ({0}, {1}, {2}): {3}")]
    NonWatertight(usize, usize, usize, String),

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: String, detail: String },

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {detail}")]
    Stage { stage: String, detail: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }

    pub fn shape(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op: op.into(), detail: detail.into() }
    }
}
