use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to point at the
/// offending line, node, column, or epoch.
#[derive(Debug, Error)]
pub enum Error {
    #[error("hierarchy file declares no classes")]
    NoClasses,
    #[error("line {line}: malformed pair line {content:?}")]
    MalformedLine { line: usize, content: String },
    #[error("hierarchy file declares {expected} pairs but contains {found}")]
    PairCountMismatch { expected: usize, found: usize },
    #[error("node {token} listed as a child more than once")]
    DuplicateChild { token: String },
    #[error("hierarchy contains a cycle")]
    CycleDetected,
    #[error("no root node: every node has a parent")]
    NoRoot,
    #[error("node {token} is not reachable from the root")]
    Disconnected { token: String },
    #[error("unknown node id {id}")]
    UnknownNode { id: usize },
    #[error("tree fails validation: {0}")]
    InvalidTree(String),
    #[error("need at least one leaf per super-class: {leaves} leaves < {supers} super-classes")]
    InfeasibleCounts { leaves: usize, supers: usize },

    #[error("no nodes at depth {level}")]
    EmptyLevel { level: usize },
    #[error("invalid radius spec: {0}")]
    InvalidRadius(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("vector norm {norm:e} is not unit within tolerance")]
    NotUnitNorm { norm: f64 },
    #[error("vector is not tangent at base point: inner product {dot:e}")]
    NotTangent { dot: f64 },
    #[error("retraction undefined: x + t vanishes{}", fmt_column(.column))]
    RetractionFailed { column: Option<usize> },
    #[error("cannot normalize a zero vector")]
    ZeroNorm,

    #[error("operation not available for the {variant} variant")]
    VariantMismatch { variant: String },
    #[error("2-d probe already attached")]
    ProbeAttached,
    #[error("non-finite values in {context}")]
    NonFinite { context: String },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("gradient check failed: max relative error {max:e} at tolerance {tolerance:e}")]
    GradCheckFailed { max: f64, tolerance: f64 },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("split contains no samples")]
    EmptySplit,
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{path}: {msg}")]
    FileFormat { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn fmt_column(column: &Option<usize>) -> String {
    match column {
        Some(c) => format!(" at column {c}"),
        None => String::new(),
    }
}
