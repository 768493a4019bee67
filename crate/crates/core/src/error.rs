use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("graph is disconnected")]
    Disconnected,

    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {diff:e}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("brute-force cap exceeded: {nodes} nodes > cap {cap}")]
    CapExceeded { nodes: usize, cap: usize },

    #[error("largest Laplacian eigenvalue must be positive, got {0}")]
    NonPositiveLambdaMax(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
