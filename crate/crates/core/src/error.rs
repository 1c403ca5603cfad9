use thiserror::Error;

/// Crate-wide error type. Variants map onto the documented failure modes of
/// each pipeline stage; the CLI translates classes of variants into exit codes.
#[derive(Debug, Error)]
pub enum Error {
    // ingest
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("column `{0}` not declared in schema")]
    UnknownColumn(String),
    #[error("non-uniform grid at row {row}: gap of {gap_minutes} minutes")]
    NonUniformGrid { row: usize, gap_minutes: i64 },
    #[error("parse error at row {row}: {msg}")]
    ParseError { row: usize, msg: String },
    #[error("all rows dropped while handling missing values")]
    AllRowsDropped,
    #[error("empty frame")]
    EmptyFrame,
    #[error("no normalization stats for metric `{0}`")]
    UnknownMetric(String),
    #[error("frame too short: have {have} rows, need {need}")]
    FrameTooShort { have: usize, need: usize },

    // labeling
    #[error("unknown alert severity `{0}`")]
    UnknownSeverity(String),
    #[error("empty series")]
    EmptySeries,
    #[error("QoS metric `{0}` not present in frame")]
    MissingQosMetric(String),
    #[error("timestamp {0} outside label series range")]
    OutOfRange(i64),

    // autodiff / model
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("backward requires a scalar loss, got shape {0}x{1}")]
    NotScalar(usize, usize),
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    // train / infer / eval
    #[error("loss diverged at epoch {epoch}, batch {batch}")]
    DivergedLoss { epoch: usize, batch: usize },
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("single-class input: both classes required")]
    SingleClass,
    #[error("label regime search unsatisfiable: {0}")]
    Unsatisfiable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
