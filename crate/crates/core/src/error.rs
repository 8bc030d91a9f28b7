use std::path::PathBuf;

/// Errors surfaced by the library.
///
/// Each variant maps onto one of the CLI exit-code families through
/// [`Error::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty dataset: {rows} rows cannot fill a window of {window}")]
    EmptyDataset { rows: usize, window: usize },

    #[error("{}:{line}: ragged row, expected {expected} fields, found {found}", path.display())]
    RaggedRow {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{}:{line}: non-numeric cell {value:?} in column {column}", path.display())]
    NonNumeric {
        path: PathBuf,
        line: usize,
        column: usize,
        value: String,
    },

    #[error("{}: malformed file: {msg}", path.display())]
    Malformed { path: PathBuf, msg: String },

    #[error("channel {0:?} not found in manifest")]
    MissingChannel(String),

    #[error("segment [{start}, {end}] is outside a sequence of length {len}")]
    SegmentOutOfRange { start: usize, end: usize, len: usize },

    #[error("only {found} exceedances over the initial threshold, at least {required} needed; lower the initial quantile")]
    TooFewExceedances { found: usize, required: usize },

    #[error("GPD fit failed: {0}")]
    FitFailed(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::File {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status for this error: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config { .. } | Error::Parameter(_) => 1,
            Error::NonFinite { .. }
            | Error::NonFiniteLoss { .. }
            | Error::TooFewExceedances { .. }
            | Error::FitFailed(_) => 3,
            _ => 2,
        }
    }
}
