use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite gradient at parameter index {index}")]
    NonFiniteGradient { index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("missing column `{column}`")]
    MissingColumn { column: String },

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column `{column}`: non-finite value")]
    NonFinite { row: usize, column: String },

    #[error("row {row}, column `{column}`: action must be 0 or 1, found `{value}`")]
    NonBinaryAction {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column `{column}`: unknown group label `{value}`")]
    UnknownGroup {
        row: usize,
        column: String,
        value: String,
    },

    #[error("file contains no data rows")]
    EmptyFile,

    #[error("sensitive column `{column}` has {count} distinct values (at most {max} supported)")]
    TooManyGroups {
        column: String,
        count: usize,
        max: usize,
    },

    #[error("fitting error: {0}")]
    Fit(String),

    #[error("group {group} has no samples")]
    EmptyGroup { group: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: String },

    #[error("bound inapplicable: l(n, p2) = {ell}, l/sqrt(n) = {ratio} is not below nu = {nu}")]
    BoundInapplicable { ell: f64, ratio: f64, nu: f64 },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
