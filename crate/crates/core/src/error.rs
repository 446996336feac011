use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node index {node} out of range for graph with {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },
    #[error("self-loop ({0}, {0}) in input edge list")]
    SelfLoop(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite state at layer {layer}")]
    NonFinite { layer: usize },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("count mismatch: {what} has {found} rows, expected {expected}")]
    CountMismatch {
        what: String,
        found: usize,
        expected: usize,
    },
    #[error("unknown check {0:?}")]
    UnknownCheck(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
