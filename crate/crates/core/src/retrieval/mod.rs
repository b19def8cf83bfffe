//! Candidate-tool retrieval: a native BM25 index and a dense retriever over
//! an external embedding service, plus a recall@k harness.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::generation::Instance;
use crate::schema::{ToolPool, ToolSpec};

pub mod bm25;
pub mod dense;

pub use bm25::{ToolDocument, ToolIndex};
pub use dense::{DenseRetriever, EmbeddingClient, EmbeddingConfig, HttpEmbeddingClient, ScriptedEmbeddingClient};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RetrievalError {
    #[error("EMPTY_POOL: cannot index an empty tool pool")]
    EmptyPool,
    #[error("EMBED_BACKEND_DOWN: {0}")]
    EmbedBackendDown(String),
    #[error("DIMENSION_MISMATCH: {0}")]
    DimensionMismatch(String),
    #[error("UNKNOWN_GOLD_TOOL: {0} is not in the pool")]
    UnknownGoldTool(String),
}

impl RetrievalError {
    pub fn code(&self) -> &'static str {
        match self {
            RetrievalError::EmptyPool => "EMPTY_POOL",
            RetrievalError::EmbedBackendDown(_) => "EMBED_BACKEND_DOWN",
            RetrievalError::DimensionMismatch(_) => "DIMENSION_MISMATCH",
            RetrievalError::UnknownGoldTool(_) => "UNKNOWN_GOLD_TOOL",
        }
    }
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Which parts of a tool make up its document text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldMask {
    pub name: bool,
    pub description: bool,
    pub parameters: bool,
}

impl Default for FieldMask {
    fn default() -> Self {
        FieldMask {
            name: true,
            description: true,
            parameters: true,
        }
    }
}

impl FieldMask {
    pub const NAME_ONLY: FieldMask = FieldMask {
        name: true,
        description: false,
        parameters: false,
    };

    pub fn document_text(&self, tool: &ToolSpec) -> String {
        let mut parts: Vec<&str> = Vec::new();
        if self.name {
            parts.push(&tool.name);
        }
        if self.description {
            parts.push(&tool.description);
        }
        if self.parameters {
            parts.extend(tool.parameters.values().map(|p| p.description.as_str()));
        }
        parts.join(" ")
    }
}

/// Sorts by descending score, then ascending name, and keeps `k`.
pub(crate) fn rank(mut scored: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

pub trait Retriever: Sync {
    /// Top-`k` tool names with scores, best first.
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<(String, f64)>, RetrievalError>;
}

impl Retriever for ToolIndex {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<(String, f64)>, RetrievalError> {
        Ok(self.search(query, k))
    }
}

impl Retriever for DenseRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<(String, f64)>, RetrievalError> {
        self.search(query, k)
    }
}

/// Distinct gold tool names of an instance, in a stable order.
pub fn gold_tools(instance: &Instance) -> BTreeSet<&str> {
    instance.calling.tool_names().collect()
}

/// Micro recall: gold tools found in the top `k`, over all gold tools.
/// An instance with no gold tools contributes nothing; an empty corpus
/// scores 1.0.
pub fn recall_at_k(
    retriever: &dyn Retriever,
    pool: &ToolPool,
    instances: &[Instance],
    k: usize,
) -> Result<f64, RetrievalError> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for inst in instances {
        let gold = gold_tools(inst);
        if let Some(missing) = gold.iter().find(|g| pool.get(g).is_none()) {
            return Err(RetrievalError::UnknownGoldTool(missing.to_string()));
        }
        if gold.is_empty() {
            continue;
        }
        let top: BTreeSet<String> = retriever.retrieve(&inst.query, k)?.into_iter().map(|(n, _)| n).collect();
        hits += gold.iter().filter(|g| top.contains(**g)).count();
        total += gold.len();
    }
    Ok(if total == 0 { 1.0 } else { hits as f64 / total as f64 })
}
