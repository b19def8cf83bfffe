//! End-to-end jobs: one pipeline stage, indexing, inference, evaluation,
//! QC and statistics, each driven by a [`JobConfig`].

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::backend::{AuditedBackend, ChatBackend, HttpBackend, Script, ScriptedBackend};
use crate::config::{BackendKind, JobConfig, RetrieverKind};
use crate::dataset::{
    load_candidates, load_instances, load_predictions, save_candidates, save_instances, save_predictions,
    CandidateRecord,
};
use crate::evaluation::{evaluate_corpus_with_candidates, render_markdown, EvalOptions, EvalReport, Prediction};
use crate::generation::backfill::missing_examples;
use crate::generation::extract::to_spaced_json;
use crate::generation::manifest::StageTimes;
use crate::generation::{
    backfill_examples, generate_field_tree, generate_multi_instances, generate_single_instances, generate_tools,
    qc_instance, BackfillOptions, Category, GenerationError, Instance, MultiOptions, PromptSet, RunManifest,
    SingleOptions, StageManifest, ToolGenOptions,
};
use crate::io::write_json_pretty;
use crate::retrieval::{DenseRetriever, HttpEmbeddingClient, Retriever, ToolIndex};
use crate::schema::{FieldTree, ToolPool, ValidationOptions};
use crate::stats::{pool_stats, StatsReport};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Fields,
    Tools,
    Single,
    Multi,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Fields => "fields",
            Stage::Tools => "tools",
            Stage::Single => "single",
            Stage::Multi => "multi",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Stage, Error> {
        match s {
            "fields" => Ok(Stage::Fields),
            "tools" => Ok(Stage::Tools),
            "single" => Ok(Stage::Single),
            "multi" => Ok(Stage::Multi),
            other => Err(Error::Config(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: String,
    pub output: String,
    pub accepted: usize,
    pub rejected: usize,
    pub warnings: Vec<String>,
}

/// The configured chat backend, wrapped so every call is audited.
/// `temperature` overrides the configured one for HTTP backends.
pub fn open_backend(cfg: &JobConfig, temperature: Option<f64>) -> Result<Box<dyn ChatBackend>, Error> {
    let audit = cfg.paths.audit_log();
    Ok(match cfg.backend.kind {
        BackendKind::Scripted => {
            let path = cfg
                .backend
                .script
                .as_ref()
                .ok_or_else(|| Error::Config("backend.script is not set".into()))?;
            let script = Script::load(path)?;
            Box::new(AuditedBackend::open(ScriptedBackend::from_script(script)?, &audit)?)
        }
        BackendKind::Http => {
            let mut config = cfg.backend.config.clone();
            if let Some(t) = temperature {
                config.temperature = t;
            }
            Box::new(AuditedBackend::open(HttpBackend::new(config)?, &audit)?)
        }
    })
}

pub fn load_prompts(cfg: &JobConfig) -> Result<PromptSet, Error> {
    match &cfg.paths.prompts_dir {
        Some(dir) => PromptSet::load_dir(dir),
        None => Ok(PromptSet::shipped()),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// What a stage depended on: decoding settings, generation knobs, and
/// hashes of the prompts and script. Paths are left out so that identical
/// runs in different directories record identical manifests.
fn config_snapshot(cfg: &JobConfig, prompts: &PromptSet) -> Result<Value, Error> {
    let script_hash = match (&cfg.backend.kind, &cfg.backend.script) {
        (BackendKind::Scripted, Some(p)) => {
            Some(sha256_hex(&std::fs::read(p).map_err(|e| Error::io(p, e))?))
        }
        _ => None,
    };
    let prompt_hashes: serde_json::Map<String, Value> = [
        &prompts.field,
        &prompts.subfield,
        &prompts.tool,
        &prompts.single_instance,
        &prompts.combine,
        &prompts.fill,
        &prompts.backfill,
        &prompts.infer,
    ]
    .into_iter()
    .map(|t| (t.name.clone(), Value::String(sha256_hex(t.body.as_bytes()))))
    .chain([(
        "example_tool".to_string(),
        Value::String(sha256_hex(prompts.example_tool.as_bytes())),
    )])
    .collect();
    Ok(json!({
        "backend": {
            "kind": cfg.backend.kind,
            "script_sha256": script_hash,
            "config": cfg.backend.config,
        },
        "generation": cfg.generation,
        "prompt_sha256": prompt_hashes,
    }))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

fn require(path: &Path, what: &str) -> Result<(), Error> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingPrereq(format!("{what} not found at {}", path.display())))
    }
}

fn tool_validation(cfg: &JobConfig) -> ValidationOptions {
    ValidationOptions {
        allow_empty_responses: cfg.generation.allow_empty_responses,
    }
}

/// Runs one stage with the configured backend.
pub fn run_generation_job(cfg: &JobConfig, stage: Stage) -> Result<StageSummary, Error> {
    // Fail on missing inputs before touching the backend.
    check_prereqs(cfg, stage)?;
    let backend = open_backend(cfg, None)?;
    run_generation_stage(cfg, stage, &*backend)
}

fn check_prereqs(cfg: &JobConfig, stage: Stage) -> Result<(), Error> {
    match stage {
        Stage::Fields => Ok(()),
        Stage::Tools => require(&cfg.paths.fields(), "fields.json (run `gen fields` first)"),
        Stage::Single | Stage::Multi => require(&cfg.paths.tools(), "tools.jsonl (run `gen tools` first)"),
    }
}

/// Runs one stage against `backend`. Outputs are written atomically and the
/// stage's counters replace its previous entry in the manifest.
pub fn run_generation_stage(cfg: &JobConfig, stage: Stage, backend: &dyn ChatBackend) -> Result<StageSummary, Error> {
    check_prereqs(cfg, stage)?;
    let prompts = load_prompts(cfg)?;
    let started = now();
    let mut manifest = StageManifest {
        config: config_snapshot(cfg, &prompts)?,
        ..Default::default()
    };
    let g = &cfg.generation;
    let parallelism = cfg.backend.config.parallelism;
    let mut warnings = Vec::new();
    // Backfill counters are kept apart so the tools totals count tools only.
    let mut backfill_manifest = None;
    let (output, accepted) = match stage {
        Stage::Fields => {
            let tree = generate_field_tree(backend, &prompts, &g.seed_fields, &mut manifest)?;
            let path = cfg.paths.fields();
            tree.save(&path)?;
            (path, tree.subfield_count())
        }
        Stage::Tools => {
            let tree = FieldTree::load(&cfg.paths.fields())?;
            let seed = cfg.require_seed("tools")?;
            let mut pool = ToolPool::new();
            let opts = ToolGenOptions {
                stall_limit: g.stall_limit,
                max_rounds_per_subfield: g.max_rounds_per_subfield,
                yield_interval: g.yield_interval,
                validation: tool_validation(cfg),
            };
            generate_tools(backend, &prompts, &mut pool, &tree, &opts, &mut manifest)?;
            let bf = BackfillOptions {
                max_passes: g.backfill_passes,
                rng_seed: seed,
                ..Default::default()
            };
            let mut bm = StageManifest {
                config: manifest.config.clone(),
                ..Default::default()
            };
            match backfill_examples(backend, &prompts, &mut pool, &bf, &mut bm) {
                Ok(()) => {}
                Err(GenerationError::BackfillIncomplete(missing)) => {
                    bm.reject("backfill", "pool", vec!["BACKFILL_INCOMPLETE".into()], missing.join(", "));
                    warnings.push(format!(
                        "BACKFILL_INCOMPLETE: {} required parameters still lack example values",
                        missing.len()
                    ));
                }
                Err(e) => return Err(e.into()),
            }
            backfill_manifest = Some(bm);
            debug_assert_eq!(warnings.is_empty(), missing_examples(&pool).is_empty());
            let path = cfg.paths.tools();
            pool.save_jsonl(&path)?;
            (path, pool.len())
        }
        Stage::Single | Stage::Multi => {
            let pool = ToolPool::load_jsonl(&cfg.paths.tools(), &tool_validation(cfg))?;
            let seed = cfg.require_seed(stage.as_str())?;
            let (category, made) = if stage == Stage::Single {
                let opts = SingleOptions {
                    count: g.single_count,
                    rng_seed: seed,
                    parallelism,
                };
                (Category::Single, generate_single_instances(backend, &prompts, &pool, &opts, &mut manifest)?)
            } else {
                let opts = MultiOptions {
                    count: g.multi_count,
                    candidate_count: g.candidate_count.min(pool.len()),
                    rng_seed: seed,
                    parallelism,
                };
                (Category::Multiple, generate_multi_instances(backend, &prompts, &pool, &opts, &mut manifest)?)
            };
            let path = cfg.paths.instances();
            let n = made.len();
            merge_instances(&path, category, made)?;
            (path, n)
        }
    };
    let rejected = manifest.rejections.len() + backfill_manifest.as_ref().map_or(0, |m| m.rejections.len());
    let mut run = RunManifest::load_or_default(&cfg.paths.manifest())?;
    let times = StageTimes { started, finished: now() };
    if let Some(bm) = backfill_manifest {
        run.record("backfill", bm, times.clone());
    }
    run.record(stage.as_str(), manifest, times);
    run.save(&cfg.paths.manifest())?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(StageSummary {
        stage: stage.as_str().into(),
        output: output.display().to_string(),
        accepted,
        rejected,
        warnings,
    })
}

/// Replaces the instances of `category` in the shared instances file,
/// keeping the other category. Single-tool instances come first.
fn merge_instances(path: &Path, category: Category, new: Vec<Instance>) -> Result<(), Error> {
    let mut all: Vec<Instance> = if path.exists() {
        load_instances(path)?.into_iter().filter(|i| i.category != category).collect()
    } else {
        Vec::new()
    };
    all.extend(new);
    all.sort_by_key(|i| i.category);
    save_instances(path, &all)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QcSummary {
    pub checked: usize,
    pub passed: usize,
    /// `(instance id, violation codes)` for every failing instance.
    pub failures: Vec<(String, Vec<String>)>,
}

pub fn run_qc_job(cfg: &JobConfig) -> Result<QcSummary, Error> {
    require(&cfg.paths.tools(), "tools.jsonl")?;
    require(&cfg.paths.instances(), "instances.jsonl")?;
    let pool = ToolPool::load_jsonl(&cfg.paths.tools(), &tool_validation(cfg))?;
    let instances = load_instances(&cfg.paths.instances())?;
    let failures: Vec<(String, Vec<String>)> = instances
        .iter()
        .filter_map(|inst| {
            let report = qc_instance(inst, &pool);
            (!report.ok).then(|| (inst.id.clone(), report.codes().into_iter().map(String::from).collect()))
        })
        .collect();
    Ok(QcSummary {
        checked: instances.len(),
        passed: instances.len() - failures.len(),
        failures,
    })
}

pub fn run_stats_job(tools: &Path, instances: Option<&Path>) -> Result<StatsReport, Error> {
    require(tools, "tool file")?;
    let pool = ToolPool::load_jsonl(tools, &ValidationOptions { allow_empty_responses: true })?;
    let instances = instances.map(load_instances).transpose()?;
    pool_stats(&pool, instances.as_deref())
}

/// Builds the BM25 index over the tool pool and saves it.
pub fn run_index_job(cfg: &JobConfig) -> Result<ToolIndex, Error> {
    require(&cfg.paths.tools(), "tools.jsonl")?;
    let pool = ToolPool::load_jsonl(&cfg.paths.tools(), &tool_validation(cfg))?;
    let r = &cfg.retriever;
    let index = ToolIndex::build(&pool, r.field_mask, r.k1, r.b)?;
    index.save(&cfg.paths.index())?;
    Ok(index)
}

/// The configured retriever over `pool`. BM25 reuses a saved index when
/// one exists and covers the same tools.
pub fn open_retriever(cfg: &JobConfig, pool: &ToolPool) -> Result<Box<dyn Retriever>, Error> {
    let r = &cfg.retriever;
    Ok(match r.kind {
        RetrieverKind::Bm25 => {
            let saved = cfg.paths.index();
            if saved.exists() {
                let index = ToolIndex::load(&saved)?;
                let same = index.len() == pool.len()
                    && index.documents().iter().zip(pool.iter()).all(|(d, t)| d.tool_name == t.name);
                if same && index.mask == r.field_mask && index.k1 == r.k1 && index.b == r.b {
                    return Ok(Box::new(index));
                }
                log::warn!("{} is stale; rebuilding the index in memory", saved.display());
            }
            Box::new(ToolIndex::build(pool, r.field_mask, r.k1, r.b)?)
        }
        RetrieverKind::Dense => {
            let client = HttpEmbeddingClient::new(r.embedding.clone())?;
            Box::new(DenseRetriever::new(Box::new(client), pool, r.field_mask)?.with_batch_size(r.embedding.batch_size))
        }
    })
}

pub fn run_retrieve(cfg: &JobConfig, query: &str, k: Option<usize>) -> Result<Vec<(String, f64)>, Error> {
    require(&cfg.paths.tools(), "tools.jsonl")?;
    let pool = ToolPool::load_jsonl(&cfg.paths.tools(), &tool_validation(cfg))?;
    let retriever = open_retriever(cfg, &pool)?;
    Ok(retriever.retrieve(query, k.unwrap_or(cfg.retriever.k))?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceSummary {
    pub instances: usize,
    pub predictions: String,
    pub candidates: String,
}

/// The tools shown to the subject model for one instance: the top `k`
/// retrieved, plus any missing gold tools when `add_gold` is set.
pub fn candidate_tools(
    retriever: &dyn Retriever,
    instance: &Instance,
    k: usize,
    add_gold: bool,
) -> Result<Vec<String>, Error> {
    let mut names: Vec<String> = retriever.retrieve(&instance.query, k)?.into_iter().map(|(n, _)| n).collect();
    if add_gold {
        for gold in instance.calling.tool_names() {
            if !names.iter().any(|n| n == gold) {
                names.push(gold.to_string());
            }
        }
    }
    Ok(names)
}

/// Prompts the subject model once per gold instance and writes
/// predictions.jsonl and candidates.jsonl.
pub fn run_inference_job(
    cfg: &JobConfig,
    backend: &dyn ChatBackend,
    retriever: &dyn Retriever,
    pool: &ToolPool,
) -> Result<InferenceSummary, Error> {
    require(&cfg.paths.instances(), "gold instances")?;
    let gold = load_instances(&cfg.paths.instances())?;
    let prompts = load_prompts(cfg)?;
    let k = cfg.retriever.k;
    let add_gold = cfg.evaluation.add_gold_candidates;
    let job = |inst: &Instance| -> Result<(Prediction, CandidateRecord), Error> {
        let names = candidate_tools(retriever, inst, k, add_gold)?;
        let shown: Vec<Value> = names
            .iter()
            .filter_map(|n| pool.get(n))
            .map(|t| t.to_prompt_value())
            .collect();
        let prompt = prompts.infer.fill(&[&to_spaced_json(&Value::Array(shown)), &inst.query])?;
        let reply = backend.complete(&prompt)?;
        Ok((
            Prediction {
                id: inst.id.clone(),
                raw_output: reply.response,
            },
            CandidateRecord {
                id: inst.id.clone(),
                candidates: names,
            },
        ))
    };
    let parallelism = cfg.backend.config.parallelism;
    let results: Vec<Result<(Prediction, CandidateRecord), Error>> = if parallelism > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| gold.par_iter().map(job).collect())
    } else {
        gold.iter().map(job).collect()
    };
    let (predictions, candidates): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().unzip();
    save_predictions(&cfg.paths.predictions(), &predictions)?;
    save_candidates(&cfg.paths.candidates(), &candidates)?;
    Ok(InferenceSummary {
        instances: predictions.len(),
        predictions: cfg.paths.predictions().display().to_string(),
        candidates: cfg.paths.candidates().display().to_string(),
    })
}

/// Inference with the configured backend and retriever.
pub fn run_configured_inference(cfg: &JobConfig) -> Result<InferenceSummary, Error> {
    require(&cfg.paths.tools(), "tools.jsonl")?;
    require(&cfg.paths.instances(), "gold instances")?;
    let pool = ToolPool::load_jsonl(&cfg.paths.tools(), &tool_validation(cfg))?;
    let retriever = open_retriever(cfg, &pool)?;
    let backend = open_backend(cfg, Some(cfg.evaluation.temperature))?;
    run_inference_job(cfg, &*backend, &*retriever, &pool)
}

/// Scores predictions.jsonl against the gold instances and writes
/// report.json and report.md into the report directory.
pub fn run_evaluation_job(cfg: &JobConfig) -> Result<EvalReport, Error> {
    require(&cfg.paths.instances(), "gold instances")?;
    require(&cfg.paths.predictions(), "predictions (run `infer` or pass a predictions file)")?;
    let gold = load_instances(&cfg.paths.instances())?;
    let predictions = load_predictions(&cfg.paths.predictions())?;
    let candidates: HashMap<String, Vec<String>> = if cfg.paths.candidates().exists() {
        load_candidates(&cfg.paths.candidates())?
    } else {
        HashMap::new()
    };
    let opts = EvalOptions {
        strict_format: cfg.evaluation.strict_format,
    };
    let mut report = evaluate_corpus_with_candidates(&predictions, &gold, &candidates, &opts)?;
    let prompts = load_prompts(cfg)?;
    report.meta.insert("strict_format".into(), json!(opts.strict_format));
    report.meta.insert("candidates_recorded".into(), json!(!candidates.is_empty()));
    if !candidates.is_empty() {
        report.meta.insert("retriever".into(), json!(cfg.retriever.kind));
        report.meta.insert("k".into(), json!(cfg.retriever.k));
        report.meta.insert("add_gold_candidates".into(), json!(cfg.evaluation.add_gold_candidates));
        report.meta.insert("inference_prompt".into(), json!(prompts.infer.body));
    }
    let dir = cfg.paths.report_dir();
    write_json_pretty(&dir.join("report.json"), &report)?;
    crate::io::write_atomic(&dir.join("report.md"), render_markdown(&report).as_bytes())?;
    Ok(report)
}
