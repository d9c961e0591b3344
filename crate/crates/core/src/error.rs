use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty dataset")]
    EmptyInput,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for {len} instances")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("duplicate removal index {0}")]
    DuplicateIndex(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver hit the iteration cap ({iterations}) with gradient norm {residual:e}")]
    IterationCap {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("line search failed at iteration {iterations} with gradient norm {residual:e}")]
    LineSearch {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}
