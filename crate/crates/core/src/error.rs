use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix has non-finite entries")]
    NonFinite,

    #[error("matrix is not skew-Hermitian within tolerance (defect {defect:.3e})")]
    NotSkewHermitian { defect: f64 },

    #[error("matrix is not unitary within tolerance (defect {defect:.3e}, allowed {allowed:.3e})")]
    NotUnitary { defect: f64, allowed: f64 },

    #[error("matrix is singular")]
    Singular,

    #[error("index out of range: ({i}, {j}) in dimension {d}")]
    IndexOutOfRange { i: usize, j: usize, d: usize },

    #[error("invalid local measure: {0}")]
    InvalidMeasure(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension {d} too large for the exact method (limit {limit}); use the monte_carlo method")]
    TooLarge { d: usize, limit: usize },

    #[error("unknown generator id {0}")]
    UnknownGenerator(u32),

    #[error("net coverage missing for cell {cell} (pair {pair})")]
    CoverageMissing { cell: usize, pair: usize },

    #[error(
        "recursion is not contracting at level {level}: error {next:.3e} >= {prev:.3e}; build a denser base net"
    )]
    NonContracting { level: usize, prev: f64, next: f64 },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
