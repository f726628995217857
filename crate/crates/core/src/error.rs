use swarm_sar_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("point ({x:.3}, {y:.3}) lies outside the world bounds")]
    OutOfBounds { x: f64, y: f64 },
    #[error("no obstacle-free route from node {from} to node {to}")]
    Unreachable { from: usize, to: usize },
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("timestamps must strictly increase (got {got} after {last})")]
    NonMonotonicTime { last: f64, got: f64 },
    #[error("graph has {n} nodes; exhaustive search is limited to {max}")]
    TooLarge { n: usize, max: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
