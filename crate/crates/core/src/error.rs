use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("mesh validation failed: {msg} (edges: {edges:?})")]
    Validation { msg: String, edges: Vec<[usize; 2]> },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("assembly error in cell {cell}: {msg}")]
    Assembly { cell: usize, msg: String },

    #[error("Newton iteration did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("linear solve failed at time step {step}: {msg}")]
    TimeStep { step: usize, msg: String },

    #[error("requested {requested} modes but only {attainable} are attainable")]
    Truncation { requested: usize, attainable: usize },

    #[error("retained energy is undefined for an all-zero spectrum")]
    UndefinedEnergy,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("DEIM greedy stagnated: requested {requested} interpolation points, collateral rank is {attainable}")]
    DeimRank { requested: usize, attainable: usize },

    #[error("reduced saddle-point system is singular at training point {index}")]
    Stabilization { index: usize },

    #[error("RBF training failed: {0}")]
    Rbf(String),

    #[error("relative error undefined: reference field has zero norm")]
    ZeroReference,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("container error: {0}")]
    Container(String),

    #[error("full-order snapshot at {param} failed: {source}")]
    Snapshot {
        param: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
