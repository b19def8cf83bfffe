//! Corpus files: instances, predictions, retrieval candidates, and adapters
//! for ingesting externally released datasets.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::calling::{is_nested, parse_call_sequence};
use crate::evaluation::Prediction;
use crate::generation::{extract_first_json, Category, Instance, Provenance};
use crate::io::{read_jsonl, to_jsonl, write_atomic};
use crate::schema::{InsertOutcome, ToolPool, ToolSpec, ValidationOptions};
use crate::Error;

pub fn load_instances(path: &Path) -> Result<Vec<Instance>, Error> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line, value) in read_jsonl(path)? {
        let inst: Instance = serde_json::from_value(value)
            .map_err(|e| Error::Invalid(format!("{}:{line}: {e}", path.display())))?;
        if inst.category != Category::for_calls(inst.calling.len()) || inst.nested != is_nested(&inst.calling) {
            return Err(Error::Invalid(format!(
                "{}:{line}: category or nested flag disagrees with the calling",
                path.display()
            )));
        }
        if !seen.insert(inst.id.clone()) {
            return Err(Error::Invalid(format!("{}:{line}: duplicate id {:?}", path.display(), inst.id)));
        }
        out.push(inst);
    }
    Ok(out)
}

pub fn save_instances(path: &Path, instances: &[Instance]) -> Result<(), Error> {
    write_atomic(path, to_jsonl(instances).as_bytes())
}

/// Reads `{"id", "output"}` lines. A non-string output is kept as its JSON
/// text so it can still be scored.
pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, Error> {
    read_jsonl(path)?
        .into_iter()
        .map(|(line, v)| {
            let id = match v.get("id") {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Number(n)) => n.to_string(),
                _ => return Err(Error::Invalid(format!("{}:{line}: missing id", path.display()))),
            };
            let raw_output = match v.get("output") {
                Some(Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
                None => return Err(Error::Invalid(format!("{}:{line}: missing output", path.display()))),
            };
            Ok(Prediction { id, raw_output })
        })
        .collect()
}

pub fn save_predictions(path: &Path, predictions: &[Prediction]) -> Result<(), Error> {
    write_atomic(path, to_jsonl(predictions).as_bytes())
}

/// Retrieved tool names for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: String,
    pub candidates: Vec<String>,
}

pub fn load_candidates(path: &Path) -> Result<HashMap<String, Vec<String>>, Error> {
    read_jsonl(path)?
        .into_iter()
        .map(|(line, v)| {
            let rec: CandidateRecord = serde_json::from_value(v)
                .map_err(|e| Error::Invalid(format!("{}:{line}: {e}", path.display())))?;
            Ok((rec.id, rec.candidates))
        })
        .collect()
}

pub fn save_candidates(path: &Path, records: &[CandidateRecord]) -> Result<(), Error> {
    write_atomic(path, to_jsonl(records).as_bytes())
}

// ---- released-data adapters ----

/// Records of a `.json` file (an array, or an object holding one array) or
/// a JSONL file. Positions are 1-based.
pub fn read_records(path: &Path) -> Result<Vec<(usize, Value)>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') || path.extension().is_some_and(|e| e == "json") {
        if let Ok(v) = serde_json::from_str::<Value>(&text) {
            let list = match v {
                Value::Array(a) => a,
                Value::Object(mut m) => {
                    // {"data": [...]} and similar wrappers
                    let key = m.iter().find(|(_, v)| v.is_array()).map(|(k, _)| k.clone());
                    match key.and_then(|k| m.remove(&k)) {
                        Some(Value::Array(a)) => a,
                        _ => vec![Value::Object(m)],
                    }
                }
                other => vec![other],
            };
            return Ok(list.into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect());
        }
    }
    read_jsonl(path)
}

const CALLING_KEYS: [&str; 5] = ["calling", "api_callings", "callings", "api_calling", "answer"];
const QUERY_KEYS: [&str; 5] = ["query", "instruction", "question", "task", "input"];

fn str_field<'a>(v: &'a Value, keys: &[&str]) -> Option<&'a str> {
    keys.iter().find_map(|k| v.get(*k).and_then(Value::as_str))
}

fn role_of(msg: &Value) -> &str {
    msg.get("from").or_else(|| msg.get("role")).and_then(Value::as_str).unwrap_or("")
}

fn text_of(msg: &Value) -> &str {
    msg.get("value").or_else(|| msg.get("content")).and_then(Value::as_str).unwrap_or("")
}

/// Converts one released record. Handles our own layout, flat
/// query/calling records, and chat transcripts whose last assistant turn
/// holds the calling JSON.
pub fn instance_from_record(v: &Value, fallback_id: &str) -> Result<Instance, String> {
    let id = match v.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => fallback_id.to_string(),
    };
    let (query, raw_calling) = if let Some(turns) = v
        .get("conversations")
        .or_else(|| v.get("messages"))
        .and_then(Value::as_array)
    {
        let query = turns
            .iter()
            .find(|m| matches!(role_of(m), "human" | "user"))
            .map(text_of)
            .ok_or("no user turn")?;
        let answer = turns
            .iter()
            .rev()
            .find(|m| matches!(role_of(m), "gpt" | "assistant"))
            .map(text_of)
            .ok_or("no assistant turn")?;
        let calling = extract_first_json(answer).map_err(|e| e.to_string())?;
        (query.to_string(), calling)
    } else {
        let query = str_field(v, &QUERY_KEYS).ok_or("no query")?;
        let calling = CALLING_KEYS
            .iter()
            .find_map(|k| v.get(*k))
            .ok_or("no calling")?;
        let calling = match calling {
            Value::String(s) => extract_first_json(s).map_err(|e| e.to_string())?,
            other => other.clone(),
        };
        (query.to_string(), calling)
    };
    let calling = match raw_calling {
        obj @ Value::Object(_) => Value::Array(vec![obj]),
        other => other,
    };
    let seq = parse_call_sequence(&calling).map_err(|e| e.to_string())?;
    if seq.is_empty() {
        return Err("empty calling".into());
    }
    let mut inst = Instance::new(id, query, seq, Provenance::default());
    // A stated category wins over the call count.
    match v.get("category").or_else(|| v.get("type")).and_then(Value::as_str) {
        Some("single") | Some("single-tool") => inst.category = Category::Single,
        Some("multiple") | Some("multi") | Some("multiple-tool") => inst.category = Category::Multiple,
        _ => {}
    }
    Ok(inst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedRecord {
    pub file: PathBuf,
    pub record: usize,
    pub reason: String,
}

#[derive(Debug, Default, Serialize)]
pub struct ReleasedData {
    #[serde(skip)]
    pub pool: ToolPool,
    #[serde(skip)]
    pub instances: Vec<Instance>,
    pub tool_files: Vec<PathBuf>,
    pub instance_files: Vec<PathBuf>,
    pub skipped_tools: Vec<SkippedRecord>,
    pub duplicate_tools: usize,
    pub skipped_instances: Vec<SkippedRecord>,
    /// Records whose id was already seen in an earlier file.
    pub duplicate_instances: usize,
}

fn looks_like_tool(v: &Value) -> bool {
    v.get("api_name").is_some() || (v.get("name").is_some() && v.get("parameters").is_some() && v.get("query").is_none())
}

/// Loads every `.json` / `.jsonl` file under `dir` (recursively, in path
/// order). Files whose first record looks like a tool feed the pool; the
/// rest are read as instances. Instance ids are deduplicated across files.
pub fn load_released_dir(dir: &Path) -> Result<ReleasedData, Error> {
    if !dir.is_dir() {
        return Err(Error::MissingPrereq(format!("{} is not a directory", dir.display())));
    }
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    let opts = ValidationOptions { allow_empty_responses: true };
    let mut data = ReleasedData::default();
    let mut seen_ids = HashSet::new();
    for file in files {
        let records = read_records(&file)?;
        let Some((_, first)) = records.first() else { continue };
        if looks_like_tool(first) {
            data.tool_files.push(file.clone());
            for (pos, v) in &records {
                match ToolSpec::from_value(v, &opts) {
                    Ok(tool) => {
                        if data.pool.insert_tool(tool) == InsertOutcome::Duplicate {
                            data.duplicate_tools += 1;
                        }
                    }
                    Err(report) => data.skipped_tools.push(SkippedRecord {
                        file: file.clone(),
                        record: *pos,
                        reason: report.codes().join(","),
                    }),
                }
            }
        } else {
            data.instance_files.push(file.clone());
            let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("record").to_string();
            for (pos, v) in &records {
                match instance_from_record(v, &format!("{stem}-{pos}")) {
                    Ok(inst) => {
                        if seen_ids.insert(inst.id.clone()) {
                            data.instances.push(inst);
                        } else {
                            data.duplicate_instances += 1;
                        }
                    }
                    Err(reason) => data.skipped_instances.push(SkippedRecord {
                        file: file.clone(),
                        record: *pos,
                        reason,
                    }),
                }
            }
        }
    }
    Ok(data)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), Error> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "json" || e == "jsonl") {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn conversation_record() {
        let v = json!({"id": 7, "conversations": [
            {"from": "human", "value": "Weather in Paris?"},
            {"from": "gpt", "value": "Sure: [{\"api\": \"getWeather\", \"parameters\": {\"city\": \"Paris\"}, \"responses\": [\"API_call_0\"]}]"}
        ]});
        let inst = instance_from_record(&v, "x").unwrap();
        assert_eq!(inst.id, "7");
        assert_eq!(inst.query, "Weather in Paris?");
        assert_eq!(inst.category, Category::Single);
    }

    #[test]
    fn flat_record_with_stated_category() {
        let v = json!({"query": "q", "api_callings": [
            {"api": "a", "parameters": {}, "responses": ["API_call_0"]},
            {"api": "b", "parameters": {"x": "API_call_0"}, "responses": ["API_call_1"]}
        ], "category": "multiple"});
        let inst = instance_from_record(&v, "f-1").unwrap();
        assert_eq!(inst.id, "f-1");
        assert!(inst.nested);
        assert_eq!(inst.category, Category::Multiple);
        assert!(instance_from_record(&json!({"query": "q"}), "z").is_err());
    }

    #[test]
    fn released_dir_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let tool = crate::schema::tests::get_temperature();
        std::fs::write(dir.path().join("tool.jsonl"), format!("{tool}\n{{\"api_name\": \"\"}}\n")).unwrap();
        let rec = json!({"id": "a", "query": "q", "calling": [{"api": "getTemperature", "parameters": {"city": "Rome"}, "responses": ["API_call_0"]}]});
        std::fs::write(dir.path().join("train.json"), json!([rec, rec]).to_string()).unwrap();
        std::fs::write(dir.path().join("test.jsonl"), format!("{rec}\n{{\"nope\": 1}}\n")).unwrap();
        let data = load_released_dir(dir.path()).unwrap();
        assert_eq!(data.pool.len(), 1);
        assert_eq!(data.skipped_tools.len(), 1);
        assert_eq!(data.instances.len(), 1);
        assert_eq!(data.duplicate_instances, 2);
        assert_eq!(data.skipped_instances.len(), 1);
    }

    #[test]
    fn predictions_accept_json_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        std::fs::write(&p, "{\"id\": \"a\", \"output\": [{\"api\": \"x\"}]}\n{\"id\": 3, \"output\": \"text\"}\n").unwrap();
        let preds = load_predictions(&p).unwrap();
        assert_eq!(preds[0].raw_output, "[{\"api\":\"x\"}]");
        assert_eq!(preds[1].id, "3");
        save_predictions(&p, &preds).unwrap();
        assert_eq!(load_predictions(&p).unwrap(), preds);
    }
}
