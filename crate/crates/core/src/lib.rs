//! Synthesis and scoring toolkit for LLM tool-calling benchmarks.
//!
//! * [`schema`]: tool template, field tree, deduplicating tool pool.
//! * [`calling`]: calling sequences with `API_call_<k>` placeholders.
//! * [`backend`]: chat-completion backends (HTTP and scripted).
//! * [`generation`]: the field → tool → instance self-instruct pipeline.
//! * [`retrieval`]: BM25 and dense candidate-tool retrieval.
//! * [`evaluation`]: Format ACC, Tool and Parameter P/R/F1, error taxonomy.
//! * [`jobs`]: end-to-end jobs driven by a [`config::JobConfig`].

use std::path::{Path, PathBuf};

pub mod backend;
pub mod calling;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod generation;
pub mod io;
pub mod jobs;
pub mod retrieval;
pub mod schema;
pub mod stats;

pub use backend::{BackendConfig, BackendError, ChatBackend, CompletionRecord, ScriptedBackend};
pub use calling::{CallSequence, ParamValue, ToolCall};
pub use evaluation::{EvalReport, MatchCounts};
pub use generation::{Category, Instance};
pub use schema::{FieldTree, ParamType, ToolPool, ToolSpec};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("CONFIG_ERROR: {0}")]
    Config(String),
    #[error("MISSING_PREREQ: {0}")]
    MissingPrereq(String),
    #[error("EMPTY_POOL: the tool pool has no tools")]
    EmptyPool,
    #[error(transparent)]
    Calling(#[from] calling::CallingError),
    #[error(transparent)]
    Backend(#[from] backend::BackendError),
    #[error(transparent)]
    Generation(#[from] generation::GenerationError),
    #[error(transparent)]
    Retrieval(#[from] retrieval::RetrievalError),
    #[error(transparent)]
    Evaluation(#[from] evaluation::EvalError),
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn parse(path: &Path, err: impl std::fmt::Display) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }

    /// Machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IO_ERROR",
            Error::Parse { .. } => "PARSE_ERROR",
            Error::Invalid(_) => "VALIDATION_ERROR",
            Error::Config(_) => "CONFIG_ERROR",
            Error::MissingPrereq(_) => "MISSING_PREREQ",
            Error::EmptyPool => "EMPTY_POOL",
            Error::Calling(e) => e.code(),
            Error::Backend(e) => e.code(),
            Error::Generation(e) => e.code(),
            Error::Retrieval(e) => e.code(),
            Error::Evaluation(e) => e.code(),
        }
    }
}
