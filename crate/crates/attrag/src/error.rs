use std::path::PathBuf;

use attrag_core::attribution::AttributionError;
use attrag_core::evaluation::EvaluationError;
use attrag_core::generation::{ClientError, GenerationError};
use attrag_core::{CorpusError, EmbeddingError, TruncationError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Jsonl {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("missing upstream artifact {0} (run the earlier stage first)")]
    MissingArtifact(PathBuf),
    #[error("invalid dataset: {0}")]
    Corpus(#[from] CorpusError),
    #[error("embedding: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("truncation: {0}")]
    Truncation(#[from] TruncationError),
    #[error("generation: {0}")]
    Generation(#[from] GenerationError),
    #[error("llm client: {0}")]
    Client(#[from] ClientError),
    #[error("attribution: {0}")]
    Attribution(#[from] AttributionError),
    #[error("evaluation: {0}")]
    Evaluation(#[from] EvaluationError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Config(String),
    #[error("case {case_id:?}: {message}")]
    Case { case_id: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Process exit status for this error: 2 for bad input data, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Corpus(_) | Error::Json { .. } | Error::Jsonl { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
