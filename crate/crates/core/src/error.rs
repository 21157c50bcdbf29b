use std::io;

use thiserror::Error;

use crate::updater::SingularPair;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column {0} has zero norm")]
    ZeroColumn(usize),

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated file: expected {expected} bytes of payload, found {found}")]
    TruncatedFile { expected: u64, found: u64 },

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("gram cache is stale for this dictionary")]
    StaleCache,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad group partition: {0}")]
    BadPartition(String),

    #[error("sparse column {col} already holds {k} entries")]
    SparsityExceeded { col: usize, k: usize },

    #[error("restricted error matrix is numerically zero")]
    ZeroMatrix,

    #[error("eigen-solver did not converge (relative residual {residual:.3e})")]
    NoConvergence {
        best: Box<SingularPair>,
        residual: f64,
    },

    #[error("all data columns have zero norm")]
    AllZeroData,

    #[error("all data rows are constant")]
    DegenerateRows,

    #[error("non-finite state at iteration {iteration}: {what}")]
    NonFiniteState { iteration: usize, what: String },

    #[error("unknown {kind} '{name}' (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}
