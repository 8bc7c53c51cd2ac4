use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HistError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid partition plan: {0}")]
    InvalidPlan(String),

    #[error("infeasible partition problem: cap {cap} per cell x {cells} cells < {d} parameters")]
    Infeasible { cap: usize, cells: usize, d: usize },

    #[error("brute force limited to N <= 4 and d <= 40 (got N = {cells}, d = {d})")]
    BruteForceGuard { cells: usize, d: usize },

    #[error("infeasible data split: {0}")]
    InfeasibleSplit(String),

    #[error("client {client} unreachable: zero effective channel")]
    Unreachable { client: usize },

    #[error("all channels are zero")]
    ZeroChannels,

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed trace: {0}")]
    Trace(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for HistError {
    fn from(e: std::io::Error) -> Self {
        HistError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HistError>;
