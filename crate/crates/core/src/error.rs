use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("duplicate class `{0}`")]
    DuplicateClass(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("ragged row at line {line}: expected {expected} values, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("k = {k} exceeds the rank {rank} of the L-ensemble")]
    InfeasibleK { k: usize, rank: usize },

    #[error("enumeration too large: C({n}, {k}) = {count} exceeds the cap {cap}")]
    EnumerationTooLarge {
        n: usize,
        k: usize,
        count: u128,
        cap: u128,
    },

    #[error("pool has {available} classes, {required} needed")]
    PoolTooSmall { available: usize, required: usize },

    #[error("missing embedding for class `{0}`")]
    MissingEmbedding(String),

    #[error("wrong sampler kind: {0}")]
    WrongKind(String),

    #[error("training loss became non-finite at meta-batch {batch}")]
    Diverged { batch: u64 },

    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("uniform sampler has zero overall diversity; embeddings or protocol are degenerate")]
    ZeroUniformDiversity,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
