//! Job configuration, read from one TOML file.
//!
//! ```toml
//! [backend]
//! kind = "scripted"            # or "http"
//! script = "script.json"
//! model_name = "gpt-3.5-turbo"  # remaining keys are BackendConfig fields
//!
//! [paths]
//! out_dir = "out"
//!
//! [retriever]
//! kind = "bm25"
//! k = 5
//!
//! [generation]
//! rng_seed = 7
//!
//! [evaluation]
//! strict_format = true
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::backend::BackendConfig;
use crate::retrieval::{EmbeddingConfig, FieldMask};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Http,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BackendSection {
    pub kind: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    #[serde(flatten)]
    pub config: BackendConfig,
}

impl<'de> Deserialize<'de> for BackendSection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut table = toml::Table::deserialize(d)?;
        let kind = match table.remove("kind") {
            Some(v) => v.try_into::<BackendKind>().map_err(D::Error::custom)?,
            None => BackendKind::default(),
        };
        let script = match table.remove("script") {
            Some(v) => Some(v.try_into::<PathBuf>().map_err(D::Error::custom)?),
            None => None,
        };
        let config = toml::Value::Table(table)
            .try_into::<BackendConfig>()
            .map_err(D::Error::custom)?;
        Ok(BackendSection { kind, script, config })
    }
}

/// Output locations. Unset files live under `out_dir` with default names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
    pub fields: Option<PathBuf>,
    pub tools: Option<PathBuf>,
    pub instances: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub audit_log: Option<PathBuf>,
    /// Directory of prompt overrides; missing files use the shipped prompts.
    pub prompts_dir: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            out_dir: PathBuf::from("out"),
            fields: None,
            tools: None,
            instances: None,
            manifest: None,
            index: None,
            predictions: None,
            candidates: None,
            report_dir: None,
            audit_log: None,
            prompts_dir: None,
        }
    }
}

impl PathsConfig {
    fn or_default(&self, set: &Option<PathBuf>, name: &str) -> PathBuf {
        set.clone().unwrap_or_else(|| self.out_dir.join(name))
    }
    pub fn fields(&self) -> PathBuf {
        self.or_default(&self.fields, "fields.json")
    }
    pub fn tools(&self) -> PathBuf {
        self.or_default(&self.tools, "tools.jsonl")
    }
    pub fn instances(&self) -> PathBuf {
        self.or_default(&self.instances, "instances.jsonl")
    }
    pub fn manifest(&self) -> PathBuf {
        self.or_default(&self.manifest, "manifest.json")
    }
    pub fn index(&self) -> PathBuf {
        self.or_default(&self.index, "index.json")
    }
    pub fn predictions(&self) -> PathBuf {
        self.or_default(&self.predictions, "predictions.jsonl")
    }
    pub fn candidates(&self) -> PathBuf {
        self.or_default(&self.candidates, "candidates.jsonl")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.or_default(&self.report_dir, "report")
    }
    pub fn audit_log(&self) -> PathBuf {
        self.or_default(&self.audit_log, "completions.jsonl")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverKind {
    #[default]
    Bm25,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieverConfig {
    pub kind: RetrieverKind,
    pub k: usize,
    pub field_mask: FieldMask,
    pub k1: f64,
    pub b: f64,
    pub embedding: EmbeddingConfig,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        RetrieverConfig {
            kind: RetrieverKind::Bm25,
            k: 5,
            field_mask: FieldMask::default(),
            k1: 1.2,
            b: 0.75,
            embedding: EmbeddingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Rounds without a new tool before moving to the next subfield.
    pub stall_limit: usize,
    pub max_rounds_per_subfield: usize,
    /// Tools offered to the model when it picks a combination.
    pub candidate_count: usize,
    pub rng_seed: Option<u64>,
    /// Example fields shown in the field prompt.
    pub seed_fields: Vec<String>,
    /// Single-tool instances; unset means one per tool.
    pub single_count: Option<usize>,
    pub multi_count: usize,
    pub backfill_passes: usize,
    pub allow_empty_responses: bool,
    pub yield_interval: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            stall_limit: 3,
            max_rounds_per_subfield: 20,
            candidate_count: 14,
            rng_seed: None,
            seed_fields: vec!["Science".into(), "Healthcare".into()],
            single_count: None,
            multi_count: 10,
            backfill_passes: 2,
            allow_empty_responses: false,
            yield_interval: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub strict_format: bool,
    /// Decoding temperature for subject-model inference.
    pub temperature: f64,
    /// Adds gold tools missing from the retrieved candidates (train-split
    /// style prompts).
    pub add_gold_candidates: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            strict_format: true,
            temperature: 0.0,
            add_gold_candidates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobConfig {
    pub backend: BackendSection,
    pub paths: PathsConfig,
    pub retriever: RetrieverConfig,
    pub generation: GenerationConfig,
    pub evaluation: EvaluationConfig,
}

impl JobConfig {
    pub fn from_toml(text: &str) -> Result<JobConfig, Error> {
        let cfg: JobConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, validates and resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<JobConfig, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        fix(&mut p.out_dir);
        for opt in [
            &mut p.fields,
            &mut p.tools,
            &mut p.instances,
            &mut p.manifest,
            &mut p.index,
            &mut p.predictions,
            &mut p.candidates,
            &mut p.report_dir,
            &mut p.audit_log,
            &mut p.prompts_dir,
            &mut self.backend.script,
        ]
        .into_iter()
        .flatten()
        {
            fix(opt);
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        self.backend.config.validate().map_err(Error::Config)?;
        if self.backend.kind == BackendKind::Scripted && self.backend.script.is_none() {
            return bad("backend.kind = \"scripted\" needs backend.script".into());
        }
        let r = &self.retriever;
        if r.k == 0 {
            return bad("retriever.k must be positive".into());
        }
        if !(r.k1 >= 0.0) || !(0.0..=1.0).contains(&r.b) {
            return bad(format!("retriever.k1 must be >= 0 and retriever.b in [0, 1], got k1={} b={}", r.k1, r.b));
        }
        let g = &self.generation;
        if g.stall_limit == 0 || g.max_rounds_per_subfield == 0 {
            return bad("generation.stall_limit and max_rounds_per_subfield must be positive".into());
        }
        if g.candidate_count < 2 {
            return bad("generation.candidate_count must be at least 2".into());
        }
        if g.seed_fields.len() != 2 {
            return bad(format!("generation.seed_fields needs exactly 2 entries, got {}", g.seed_fields.len()));
        }
        if g.backfill_passes == 0 || g.yield_interval == 0 {
            return bad("generation.backfill_passes and yield_interval must be positive".into());
        }
        if !(self.evaluation.temperature >= 0.0) {
            return bad("evaluation.temperature must be >= 0".into());
        }
        Ok(())
    }

    /// The seed for a stage that samples; its absence is a config error.
    pub fn require_seed(&self, stage: &str) -> Result<u64, Error> {
        self.generation
            .rng_seed
            .ok_or_else(|| Error::Config(format!("stage {stage} samples and needs generation.rng_seed")))
    }
}
