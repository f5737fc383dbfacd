use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("singular kernel evaluation: {0}")]
    Singularity(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("position {position:?} lies outside the root box")]
    OutsideRoot { position: [f64; 3] },
    #[error("cannot partition {leaves} nonempty leaves over {ranks} ranks")]
    TooManyRanks { leaves: usize, ranks: usize },
    #[error("leaf keys are not Morton-contiguous: {0}")]
    NonContiguous(String),
    #[error("grid dimensions {got:?} incompatible with {want:?}: {reason}")]
    Dimensions {
        got: (usize, usize),
        want: (usize, usize),
        reason: &'static str,
    },
    #[error("offset {distance} is inside the far-field threshold {threshold}")]
    NotFarField { distance: f64, threshold: f64 },
    #[error("misaligned slices: {0}")]
    Misaligned(String),
    #[error("rank {rank}: {message}")]
    Rank { rank: usize, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("deadlock: {0}")]
    Deadlock(String),
    #[error("degenerate series: {0}")]
    Degenerate(String),
    #[error("particle file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
