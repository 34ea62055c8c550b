use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlrError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("curves are defined on different grids")]
    GridMismatch,

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("derivative order {q} is not supported for kernel order {order}")]
    UnsupportedDerivativeOrder { q: usize, order: usize },

    #[error("degenerate design: T'W⁻¹T has condition estimate {condition:e}")]
    DegenerateDesign { condition: f64 },

    #[error("factorization of W failed (including the jittered retry)")]
    FactorizationFailure,

    #[error("GCV undefined at lambda = {lambda:e}: trace(H)/n = {trace_ratio}")]
    GcvUndefined { lambda: f64, trace_ratio: f64 },

    #[error("lambda selection failed: GCV undefined at every grid point")]
    SelectionFailure,

    #[error("invalid kernel matrix: asymmetry {asymmetry:e} exceeds tolerance")]
    InvalidKernel { asymmetry: f64 },

    #[error("truncation error: {0}")]
    Truncation(String),
}

pub type Result<T> = std::result::Result<T, FlrError>;
