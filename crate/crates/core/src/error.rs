use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("tuple index {index} out of range for corpus of {len} tuples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("distribution does not sum to one (sum = {0})")]
    NotNormalized(f64),

    #[error("unknown resource `{0}`")]
    UnknownResource(String),

    #[error("insufficient history: need {need} values, have {have}")]
    InsufficientHistory { need: usize, have: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
