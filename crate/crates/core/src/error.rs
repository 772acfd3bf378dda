use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: String, detail: String },

    #[error("NaN produced at node {node} ({op})")]
    NanDetected { node: usize, op: String },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("NaN gradient for parameter `{0}`")]
    NanGradient(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("IDX parse error at byte {offset}: {detail}")]
    Idx { offset: usize, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
