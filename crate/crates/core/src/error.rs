//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A cell in the input could not be decoded under the declared column
    /// kind. Reported with the 1-based data row so it maps onto the file.
    #[error("row {row}, column {column:?}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("unknown column {0:?}")]
    UnknownColumn(String),

    #[error("column {column:?} missing from CSV header")]
    MissingColumn { column: String },

    #[error("categorical value {value:?} not in dictionary of column {column:?}")]
    UnseenCategory { column: String, value: String },

    #[error("duplicate clustered key(s): {}", format_keys(.0))]
    DuplicateKeys(Vec<u64>),

    #[error("clustered key(s) not present: {}", format_keys(.0))]
    MissingKeys(Vec<u64>),

    #[error("values of key column {column:?} are not unique (first repeat at data row {row})")]
    NonUniqueKeyColumn { column: String, row: usize },

    #[error("an octree host index needs at least two columns, got {0}")]
    OctreeNeedsColumns(usize),

    #[error("clustered key space exhausted in bucket {bucket} ({count} rows in a range of {span})")]
    KeySpaceExhausted { bucket: u32, count: u64, span: u64 },

    #[error("timing fit is degenerate: {0}")]
    DegenerateFit(String),

    #[error(
        "no range on column {column:?} hit selectivity {target} within [{lo}, {hi}] after {attempts} attempts"
    )]
    SelectivityUnreachable {
        column: String,
        target: f64,
        lo: f64,
        hi: f64,
        attempts: usize,
    },

    /// An indexed execution disagreed with the full-scan oracle. This is the
    /// one error a benchmark run converts into a dedicated exit code.
    #[error("exactness violation: {0}")]
    ExactnessViolation(String),

    #[error("invalid table file: {0}")]
    BadTableFile(String),

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// At most eight keys in a message; batches can be large.
fn format_keys(keys: &[u64]) -> String {
    const SHOWN: usize = 8;
    let mut s = keys
        .iter()
        .take(SHOWN)
        .map(|k| k.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    if keys.len() > SHOWN {
        s.push_str(&format!(", … ({} total)", keys.len()));
    }
    s
}
