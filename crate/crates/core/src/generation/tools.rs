use serde_json::Value;

use crate::backend::ChatBackend;
use crate::generation::extract::extract_first_json;
use crate::generation::manifest::{BatchCounters, StageManifest, StallRecord, YieldPoint};
use crate::generation::prompts::PromptSet;
use crate::generation::GenerationError;
use crate::schema::{FieldTree, InsertOutcome, ToolPool, ToolSpec, ValidationOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct ToolGenOptions {
    /// Consecutive rounds without a new tool before moving to the next subfield.
    pub stall_limit: usize,
    /// Hard cap on rounds per subfield.
    pub max_rounds_per_subfield: usize,
    /// Backend calls between yield-curve samples.
    pub yield_interval: usize,
    pub validation: ValidationOptions,
}

impl Default for ToolGenOptions {
    fn default() -> Self {
        ToolGenOptions {
            stall_limit: 3,
            max_rounds_per_subfield: 20,
            yield_interval: 200,
            validation: ValidationOptions::default(),
        }
    }
}

/// Generates tools subfield by subfield until the model stops producing new
/// ones. Invalid tool objects are logged and skipped.
pub fn generate_tools(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    pool: &mut ToolPool,
    tree: &FieldTree,
    opts: &ToolGenOptions,
    manifest: &mut StageManifest,
) -> Result<(), GenerationError> {
    if tree.subfield_count() == 0 {
        return Err(GenerationError::EmptyTree);
    }
    let (example_field, example_subfield) = example_path(&prompts.example_tool);
    let mut calls = 0usize;
    let interval = opts.yield_interval.max(1);
    let mut next_sample = interval;

    for (field, subfield) in tree.pairs() {
        let path = format!("{}/{}", path_part(field), path_part(subfield));
        let prompt = prompts
            .tool
            .fill(&[&example_field, &example_subfield, &prompts.example_tool, field, subfield])?;
        let mut stalls = 0;
        let mut rounds = 0;
        let mut added = 0;
        while stalls < opts.stall_limit.max(1) && rounds < opts.max_rounds_per_subfield {
            rounds += 1;
            let label = format!("{path}#{rounds}");
            let mut batch = BatchCounters::new(&label);
            let items = match ask_json(backend, &prompt, &mut batch)? {
                Some(Value::Array(items)) => items,
                Some(obj @ Value::Object(_)) => vec![obj],
                Some(other) => {
                    manifest.reject(&label, "reply", vec!["PARSE_FAILURE".into()], format!("expected tool objects, got {other}"));
                    Vec::new()
                }
                None => {
                    manifest.reject(&label, "reply", vec!["NO_JSON_FOUND".into()], "no JSON in reply after retry");
                    Vec::new()
                }
            };
            for (i, mut item) in items.into_iter().enumerate() {
                batch.attempted += 1;
                let Some(obj) = item.as_object_mut() else {
                    batch.rejected += 1;
                    manifest.reject(&label, format!("item {i}"), vec!["NOT_AN_OBJECT".into()], "");
                    continue;
                };
                batch.parsed += 1;
                obj.insert("field".into(), Value::String(path.clone()));
                match ToolSpec::from_value(&item, &opts.validation) {
                    Err(report) => {
                        batch.rejected += 1;
                        let name = item.get("api_name").and_then(Value::as_str).unwrap_or("?").to_string();
                        let detail = report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
                        manifest.reject(&label, name, report.codes().into_iter().map(String::from).collect(), detail);
                    }
                    Ok(tool) => match pool.insert_tool(tool) {
                        InsertOutcome::Added => batch.accepted += 1,
                        InsertOutcome::Duplicate => batch.deduped += 1,
                    },
                }
            }
            calls += batch.calls;
            while calls >= next_sample {
                manifest.yield_curve.push(YieldPoint { calls: next_sample, tools: pool.len() });
                next_sample += interval;
            }
            if batch.accepted == 0 {
                stalls += 1;
            } else {
                stalls = 0;
                added += batch.accepted;
            }
            manifest.push_batch(batch);
        }
        manifest.stalls.push(StallRecord {
            field: field.to_string(),
            subfield: subfield.to_string(),
            rounds,
            tools_added: added,
            final_stalls: stalls,
            stopped_by: if stalls >= opts.stall_limit.max(1) { "stalled" } else { "max_rounds" }.into(),
        });
    }
    if manifest.yield_curve.last().map(|p| p.calls) != Some(calls) {
        manifest.yield_curve.push(YieldPoint { calls, tools: pool.len() });
    }
    Ok(())
}

/// Asks once, and once more if the reply holds no JSON.
fn ask_json(backend: &dyn ChatBackend, prompt: &str, batch: &mut BatchCounters) -> Result<Option<Value>, GenerationError> {
    for _ in 0..2 {
        batch.calls += 1;
        let reply = backend.complete(prompt)?;
        if let Ok(v) = extract_first_json(&reply.response) {
            return Ok(Some(v));
        }
    }
    Ok(None)
}

/// A `/` inside a field or subfield name would break the `field/subfield` shape.
fn path_part(name: &str) -> String {
    name.trim().replace('/', "-")
}

fn example_path(example_tool: &str) -> (String, String) {
    let field = serde_json::from_str::<Value>(example_tool)
        .ok()
        .and_then(|v| v.get("field").and_then(Value::as_str).map(String::from))
        .unwrap_or_default();
    match field.split_once('/') {
        Some((f, s)) => (f.to_string(), s.to_string()),
        None => (field, String::new()),
    }
}
