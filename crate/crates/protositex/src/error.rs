use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("empty document: input is empty after whitespace normalization")]
    EmptyDocument,

    #[error("empty batch: at least one sub-sentence is required")]
    EmptyBatch,

    #[error("inconsistent annotation in document {doc_id}: {detail}")]
    InconsistentAnnotation { doc_id: String, detail: String },

    #[error("sub-sentence annotations required for this operation (set lambda1 = lambda2 = 0 to train without them)")]
    AnnotationRequired,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("non-finite loss at {context}: training diverged")]
    Divergence { context: String },

    #[error("incompatible checkpoint: found format version {found}, expected {expected}")]
    IncompatibleCheckpoint { found: u32, expected: u32 },

    #[error("failed to deserialize {path}: {detail}")]
    Deserialization { path: String, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
