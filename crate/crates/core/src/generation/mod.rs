//! The field → tool → instance self-instruct pipeline.

use serde::{Deserialize, Serialize};

use crate::backend::BackendError;
use crate::calling::{is_nested, CallSequence, CallingError};

pub mod backfill;
pub mod extract;
pub mod fields;
pub mod instances;
pub mod manifest;
pub mod prompts;
pub mod qc;
pub mod tools;

pub use backfill::{backfill_examples, BackfillOptions};
pub use extract::{extract_first_json, parse_list_literal};
pub use fields::generate_field_tree;
pub use instances::{
    combine_tools, fill_template, generate_multi_instances, generate_single_instance,
    generate_single_instances, sample_values, MultiOptions, SingleOptions,
};
pub use manifest::{BatchCounters, RunManifest, StageManifest};
pub use prompts::{PromptSet, PromptTemplate};
pub use qc::{qc_instance, QcReport, QcViolation};
pub use tools::{generate_tools, ToolGenOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Single,
    Multiple,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Single => "single",
            Category::Multiple => "multiple",
        }
    }

    pub fn for_calls(n: usize) -> Category {
        if n <= 1 {
            Category::Single
        } else {
            Category::Multiple
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Provenance {
    /// `field/subfield` of each tool the instance was built from.
    pub subfields: Vec<String>,
    /// Which prompt path produced the instance.
    pub template: String,
    pub backend: String,
}

/// A user query with its gold calling sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub query: String,
    pub calling: CallSequence,
    pub category: Category,
    pub nested: bool,
    #[serde(default)]
    pub provenance: Provenance,
}

impl Instance {
    /// Builds an instance with `category` and `nested` derived from the calling.
    pub fn new(id: impl Into<String>, query: impl Into<String>, calling: CallSequence, provenance: Provenance) -> Self {
        Instance {
            id: id.into(),
            query: query.into(),
            category: Category::for_calls(calling.len()),
            nested: is_nested(&calling),
            calling,
            provenance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenerationError {
    #[error("QC_REJECTED: {}", codes(.0))]
    QcRejected(Vec<QcViolation>),
    #[error("EMPTY_TREE: the model returned no fields")]
    EmptyTree,
    #[error("NO_JSON_FOUND: {0}")]
    NoJson(String),
    #[error("BACKFILL_INCOMPLETE: no example values for {}", .0.join(", "))]
    BackfillIncomplete(Vec<String>),
    #[error("POOL_TOO_SMALL: need {need} tools, pool has {have}")]
    PoolTooSmall { need: usize, have: usize },
    #[error("NO_EXAMPLE_VALUES: {0}")]
    NoExampleValues(String),
    #[error("TEMPLATE_ERROR: {0}")]
    Template(String),
    #[error(transparent)]
    Calling(#[from] CallingError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

fn codes(v: &[QcViolation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

impl GenerationError {
    pub fn code(&self) -> &'static str {
        match self {
            GenerationError::QcRejected(_) => "QC_REJECTED",
            GenerationError::EmptyTree => "EMPTY_TREE",
            GenerationError::NoJson(_) => "NO_JSON_FOUND",
            GenerationError::BackfillIncomplete(_) => "BACKFILL_INCOMPLETE",
            GenerationError::PoolTooSmall { .. } => "POOL_TOO_SMALL",
            GenerationError::NoExampleValues(_) => "NO_EXAMPLE_VALUES",
            GenerationError::Template(_) => "TEMPLATE_ERROR",
            GenerationError::Calling(e) => e.code(),
            GenerationError::Backend(e) => e.code(),
        }
    }

    /// Item-level failures are logged and skipped; the rest abort a stage.
    pub fn is_item_level(&self) -> bool {
        !matches!(self, GenerationError::Backend(_) | GenerationError::Template(_))
    }

    /// The QC codes for a rejection, or this error's own code.
    pub fn reason_codes(&self) -> Vec<String> {
        match self {
            GenerationError::QcRejected(v) => v.iter().map(|v| v.code.clone()).collect(),
            other => vec![other.code().to_string()],
        }
    }
}
