use std::io;
use std::path::PathBuf;

/// Errors produced by the pqii library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("no records")]
    NoRecords,

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("truncated payload: header declares {expected} values, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("record {record} has dimension {found}, expected {expected}")]
    RecordDimension {
        record: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("csv: missing column {0:?}")]
    MissingColumn(String),

    #[error("csv: cannot parse {value:?} at row {row}, column {column:?}")]
    CsvParse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("csv: {0}")]
    Csv(String),

    #[error("csv: selection produced no columns")]
    EmptySelection,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("k={k} exceeds the number of points ({n})")]
    TooFewPoints { k: usize, n: usize },

    #[error("only {distinct} distinct rows available, need at least ks={ks}")]
    TooFewDistinct { distinct: usize, ks: usize },

    #[error("code {code} out of range for subspace {subspace} (ks={ks})")]
    CodeOutOfRange {
        subspace: usize,
        code: usize,
        ks: usize,
    },

    #[error("duplicate id {0}")]
    DuplicateId(u64),

    #[error("index mismatch: {0}")]
    IndexMismatch(String),

    #[error("subset ids must be sorted ascending and unique (violated at position {0})")]
    UnsortedSubset(usize),

    #[error("chunk {chunk_id} failed: {source}")]
    Chunk {
        chunk_id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bench csv line {line}: {message}")]
    BenchCsv { line: u64, message: String },

    #[error("no data rows")]
    NoDataRows,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
