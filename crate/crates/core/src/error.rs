use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid operand shape {shape:?} ({detail})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        detail: String,
    },

    #[error("{op}: domain error at flat index {index} (value {value})")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },

    #[error("{op}: produced a non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("gradient check: probe at coordinate {coordinate} failed")]
    GradCheckProbe {
        coordinate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("representation batch needs at least 2 rows, got {rows}")]
    BatchTooSmall { rows: usize },

    #[error("row {row} has near-zero norm; cosine dissimilarity undefined")]
    ZeroRow { row: usize },

    #[error("column {column} of {view} is degenerate (variance {variance:.3e} <= 1e-10)")]
    DegenerateColumn {
        view: &'static str,
        column: usize,
        variance: f64,
    },

    #[error("config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("sampler diverged: non-finite state at step {step}")]
    SamplerDiverged {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training aborted at step {step}: {reason}")]
    TrainingAborted { step: u64, reason: String },

    #[error("checkpoint field `{field}` is malformed: {reason}")]
    Checkpoint { field: String, reason: String },

    #[error("mmd needs at least 2 samples per side (got n={n}, m={m})")]
    MmdTooFewSamples { n: usize, m: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
