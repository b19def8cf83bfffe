//! Single-tool and multi-tool instance generation.

use std::sync::atomic::{AtomicUsize, Ordering};

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::backend::{BackendError, ChatBackend, CompletionRecord};
use crate::calling::{build_template, parse_call_sequence, CallSequence, Literal, ParamValue};
use crate::generation::extract::{
    bracketed_text, extract_first_json, parse_list_literal, python_str, quote_bare_blanks, to_call_json,
    to_spaced_json,
};
use crate::generation::manifest::{BatchCounters, StageManifest};
use crate::generation::prompts::PromptSet;
use crate::generation::qc::{qc_instance, QcViolation};
use crate::generation::{GenerationError, Instance, Provenance};
use crate::schema::{ParamType, ToolPool, ToolSpec};

/// Jobs per manifest batch.
const BATCH_SIZE: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingleOptions {
    /// Number of tools to sample; `None` (or at least the pool size) means
    /// one instance per tool.
    pub count: Option<usize>,
    pub rng_seed: u64,
    pub parallelism: usize,
}

impl Default for SingleOptions {
    fn default() -> Self {
        SingleOptions {
            count: None,
            rng_seed: 0,
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiOptions {
    pub count: usize,
    pub candidate_count: usize,
    pub rng_seed: u64,
    pub parallelism: usize,
}

impl Default for MultiOptions {
    fn default() -> Self {
        MultiOptions {
            count: 10,
            candidate_count: 14,
            rng_seed: 0,
            parallelism: 1,
        }
    }
}

/// Job `i` draws from its own stream so results do not depend on which
/// worker runs it.
fn job_rng(seed: u64, job: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(job);
    rng
}

/// Converts an example value to a literal of the parameter's kind, keeping
/// the text when it does not parse as that kind.
pub fn typed_literal(kind: ParamType, text: &str) -> Literal {
    let t = text.trim();
    match kind {
        ParamType::Int => t.parse().map(Literal::Int).unwrap_or_else(|_| Literal::Str(t.into())),
        ParamType::Float => match t.parse::<f64>() {
            Ok(f) if f.is_finite() => Literal::Float(f),
            _ => Literal::Str(t.into()),
        },
        ParamType::Bool => match t.to_ascii_lowercase().as_str() {
            "true" => Literal::Bool(true),
            "false" => Literal::Bool(false),
            _ => Literal::Str(t.into()),
        },
        ParamType::Str => Literal::Str(t.into()),
    }
}

/// One value per required parameter, uniform over its example values.
pub fn sample_values(tool: &ToolSpec, rng: &mut impl Rng) -> Result<IndexMap<String, ParamValue>, GenerationError> {
    let mut out = IndexMap::new();
    for p in tool.required_params() {
        if p.example_values.is_empty() {
            return Err(GenerationError::NoExampleValues(format!("{}.{}", tool.name, p.name)));
        }
        let pick = &p.example_values[rng.random_range(0..p.example_values.len())];
        out.insert(p.name.clone(), ParamValue::Literal(typed_literal(p.kind, pick)));
    }
    Ok(out)
}

/// Prompts for a description of one concrete call and gates the result.
pub fn generate_single_instance(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    pool: &ToolPool,
    tool: &ToolSpec,
    values: IndexMap<String, ParamValue>,
    id: &str,
) -> Result<Instance, GenerationError> {
    let mut calling = build_template(&[tool])?;
    calling.calls[0].parameters = values;
    let params: Map<String, Value> = calling.calls[0]
        .parameters
        .iter()
        .map(|(k, v)| (k.clone(), v.to_value()))
        .collect();
    let shown = to_call_json(&json!({"api": tool.name, "parameters": params}));
    let prompt = prompts.single_instance.fill(&[&shown])?;
    let reply = backend.complete(&prompt)?;
    let text = after_marker(&reply.response, "Task description =").unwrap_or(&reply.response);
    let query = bracketed_text(text);
    let instance = Instance::new(
        id,
        query,
        calling,
        Provenance {
            subfields: vec![tool.field_path.clone()],
            template: "single_instance".into(),
            backend: backend.backend_id(),
        },
    );
    gate(instance, pool, Vec::new())
}

/// Samples `candidate_count` tools, asks the model to pick a combinable
/// subset, and returns the picked names with the model's task sketch.
pub fn combine_tools(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    pool: &ToolPool,
    candidate_count: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<String>, String), GenerationError> {
    if candidate_count > pool.len() || candidate_count < 2 {
        return Err(GenerationError::PoolTooSmall {
            need: candidate_count.max(2),
            have: pool.len(),
        });
    }
    let candidates: Vec<&ToolSpec> = sample(rng, pool.len(), candidate_count)
        .into_iter()
        .map(|i| &pool.tools()[i])
        .collect();
    let given = candidates
        .iter()
        .map(|t| format!("{{{}: {}}}", python_str(&t.name), python_str(&t.description)))
        .collect::<Vec<_>>()
        .join(", ");
    let prompt = prompts.combine.fill(&[&format!("[{given}]")])?;

    let mut selected = Vec::new();
    let mut reply = String::new();
    for _ in 0..2 {
        reply = backend.complete(&prompt)?.response;
        let list_text = after_marker(&reply, "selected_apis").unwrap_or(&reply);
        selected = parse_list_literal(list_text);
        if !selected.is_empty() {
            break;
        }
    }
    if selected.is_empty() {
        return Err(GenerationError::QcRejected(vec![QcViolation::new("PARSE_FAILURE", "no selected_apis list")]));
    }
    let mut violations = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for name in selected {
        if !candidates.iter().any(|t| t.name == name) {
            violations.push(QcViolation::new("UNKNOWN_SELECTION", name));
        } else if !names.contains(&name) {
            names.push(name);
        }
    }
    if names.len() + violations.len() < 2 {
        violations.push(QcViolation::new("TOO_FEW_SELECTED", format!("{} selected", names.len())));
    }
    if !violations.is_empty() {
        return Err(GenerationError::QcRejected(violations));
    }
    let sketch = after_marker(&reply, "task_description").map(bracketed_text).unwrap_or_default();
    Ok((names, sketch))
}

/// Shows the tools and the blank template, parses the filled calling and
/// the task description, and gates the result. A reply without a parseable
/// calling is asked for once more.
pub fn fill_template(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    pool: &ToolPool,
    tools: &[&ToolSpec],
    template: &CallSequence,
    id: &str,
) -> Result<Instance, GenerationError> {
    let api_list = to_spaced_json(&Value::Array(tools.iter().map(|t| t.to_prompt_value()).collect()));
    let origin = to_spaced_json(&template.to_value()).replace(&format!("\"{}\"", crate::calling::BLANK), crate::calling::BLANK);
    let prompt = prompts.fill.fill(&[&api_list, &origin])?;

    let mut parsed = None;
    let mut last_error = String::new();
    for _ in 0..2 {
        let reply = backend.complete(&prompt)?.response;
        match parse_fill_reply(&reply) {
            Ok(p) => {
                parsed = Some(p);
                break;
            }
            Err(e) => last_error = e,
        }
    }
    let Some((calling, query)) = parsed else {
        return Err(GenerationError::QcRejected(vec![QcViolation::new("PARSE_FAILURE", last_error)]));
    };

    let mut extra = Vec::new();
    let expected: Vec<&str> = template.tool_names().collect();
    let got: Vec<&str> = calling.tool_names().collect();
    if expected != got {
        extra.push(QcViolation::new("TEMPLATE_MISMATCH", format!("expected {expected:?}, got {got:?}")));
    }
    if calling.has_blank() {
        extra.push(QcViolation::new("UNFILLED_BLANK", ""));
    }
    let instance = Instance::new(
        id,
        query,
        calling,
        Provenance {
            subfields: tools.iter().map(|t| t.field_path.clone()).collect(),
            template: "combine+fill".into(),
            backend: backend.backend_id(),
        },
    );
    gate(instance, pool, extra)
}

fn parse_fill_reply(reply: &str) -> Result<(CallSequence, String), String> {
    let calling_text = after_marker(reply, "improved_api_calling").unwrap_or(reply);
    let calling_text = match calling_text.find("task_description") {
        Some(i) => &calling_text[..i],
        None => calling_text,
    };
    let raw = extract_first_json(&quote_bare_blanks(calling_text)).map_err(|e| e.to_string())?;
    if !raw.is_array() {
        return Err("improved_api_calling is not a list".into());
    }
    let calling = parse_call_sequence(&raw).map_err(|e| e.to_string())?;
    let query = after_marker(reply, "task_description").map(bracketed_text).unwrap_or_default();
    Ok((calling, query))
}

/// Text after the first occurrence of `marker`.
fn after_marker<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.find(marker).map(|i| &text[i + marker.len()..])
}

fn gate(instance: Instance, pool: &ToolPool, mut violations: Vec<QcViolation>) -> Result<Instance, GenerationError> {
    let report = qc_instance(&instance, pool);
    violations.extend(report.violations);
    if violations.is_empty() {
        Ok(instance)
    } else {
        Err(GenerationError::QcRejected(violations))
    }
}

/// Counts calls made through it.
struct Counting<'a> {
    inner: &'a dyn ChatBackend,
    calls: AtomicUsize,
}

impl ChatBackend for Counting<'_> {
    fn backend_id(&self) -> String {
        self.inner.backend_id()
    }

    fn complete(&self, prompt: &str) -> Result<CompletionRecord, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.complete(prompt)
    }
}

struct JobOutcome {
    item: String,
    calls: usize,
    result: Result<Instance, GenerationError>,
}

fn run_jobs<F>(n: usize, parallelism: usize, job: F) -> Vec<JobOutcome>
where
    F: Fn(usize) -> JobOutcome + Sync + Send,
{
    if parallelism > 1 {
        if let Ok(workers) = rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
            return workers.install(|| (0..n).into_par_iter().map(&job).collect());
        }
    }
    (0..n).map(job).collect()
}

/// Folds job outcomes into the manifest in job order. The first backend
/// failure aborts the stage; item-level failures become rejections.
fn collect(stage: &str, outcomes: Vec<JobOutcome>, manifest: &mut StageManifest) -> Result<Vec<Instance>, GenerationError> {
    let mut accepted = Vec::new();
    for (b, chunk) in outcomes.chunks(BATCH_SIZE).enumerate() {
        let mut batch = BatchCounters::new(format!("{stage}:{b}"));
        for out in chunk {
            batch.calls += out.calls;
            batch.attempted += 1;
            match &out.result {
                Ok(instance) => {
                    batch.parsed += 1;
                    batch.accepted += 1;
                    accepted.push(instance.clone());
                }
                Err(e) if e.is_item_level() => {
                    let codes = e.reason_codes();
                    if !codes.iter().any(|c| c == "PARSE_FAILURE") {
                        batch.parsed += 1;
                    }
                    batch.rejected += 1;
                    manifest.reject(&batch.label, &out.item, codes, e.to_string());
                }
                Err(e) => return Err(e.clone()),
            }
        }
        manifest.push_batch(batch);
    }
    Ok(accepted)
}

/// One single-tool instance per chosen tool.
pub fn generate_single_instances(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    pool: &ToolPool,
    opts: &SingleOptions,
    manifest: &mut StageManifest,
) -> Result<Vec<Instance>, GenerationError> {
    let chosen: Vec<usize> = match opts.count {
        Some(n) if n < pool.len() => {
            let mut picked = sample(&mut job_rng(opts.rng_seed, u64::MAX), pool.len(), n).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..pool.len()).collect(),
    };
    let outcomes = run_jobs(chosen.len(), opts.parallelism, |j| {
        let tool = &pool.tools()[chosen[j]];
        let counting = Counting { inner: backend, calls: AtomicUsize::new(0) };
        let id = format!("single-{j:05}");
        let result = sample_values(tool, &mut job_rng(opts.rng_seed, j as u64))
            .and_then(|values| generate_single_instance(&counting, prompts, pool, tool, values, &id));
        JobOutcome {
            item: tool.name.clone(),
            calls: counting.calls.into_inner(),
            result,
        }
    });
    collect("single", outcomes, manifest)
}

/// `count` combine-then-fill jobs.
pub fn generate_multi_instances(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    pool: &ToolPool,
    opts: &MultiOptions,
    manifest: &mut StageManifest,
) -> Result<Vec<Instance>, GenerationError> {
    if opts.candidate_count > pool.len() || opts.candidate_count < 2 {
        return Err(GenerationError::PoolTooSmall {
            need: opts.candidate_count.max(2),
            have: pool.len(),
        });
    }
    let outcomes = run_jobs(opts.count, opts.parallelism, |j| {
        let counting = Counting { inner: backend, calls: AtomicUsize::new(0) };
        let id = format!("multi-{j:05}");
        let result = (|| {
            let mut rng = job_rng(opts.rng_seed, j as u64);
            let (names, _sketch) = combine_tools(&counting, prompts, pool, opts.candidate_count, &mut rng)?;
            let tools: Vec<&ToolSpec> = names.iter().filter_map(|n| pool.get(n)).collect();
            let template = build_template(&tools)?;
            fill_template(&counting, prompts, pool, &tools, &template, &id)
        })();
        JobOutcome {
            item: id.clone(),
            calls: counting.calls.into_inner(),
            result,
        }
    });
    collect("multi", outcomes, manifest)
}
