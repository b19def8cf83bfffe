//! Tool template, field tree and the deduplicating tool pool.
//!
//! The JSON shape of a tool is fixed: `api_name`, `api_description`, `field`,
//! `parameters`, `required`, `responses`. Candidates coming out of a model are
//! checked with [`validate_tool`] before they become a [`ToolSpec`].

use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::io::{read_jsonl, write_atomic};
use crate::Error;

/// The four value kinds a parameter or response can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamType {
    #[serde(rename = "str")]
    Str,
    #[serde(rename = "int")]
    Int,
    #[serde(rename = "float")]
    Float,
    #[serde(rename = "bool")]
    Bool,
}

impl ParamType {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamType::Str => "str",
            ParamType::Int => "int",
            ParamType::Float => "float",
            ParamType::Bool => "bool",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "str" => Some(ParamType::Str),
            "int" => Some(ParamType::Int),
            "float" => Some(ParamType::Float),
            "bool" => Some(ParamType::Bool),
            _ => None,
        }
    }
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpec {
    pub name: String,
    pub kind: ParamType,
    pub description: String,
    /// Values parsed from the trailing `(e.g., ...)` clause of the description.
    pub example_values: Vec<String>,
}

impl ParameterSpec {
    pub fn new(name: impl Into<String>, kind: ParamType, description: impl Into<String>) -> Self {
        let description = description.into();
        let example_values = extract_value_examples(&description);
        ParameterSpec {
            name: name.into(),
            kind,
            description,
            example_values,
        }
    }

    /// Replaces the example clause (or appends one) so that the description
    /// and `example_values` stay in sync through serialization.
    pub fn set_examples(&mut self, values: Vec<String>) {
        let base = strip_example_clause(&self.description).trim_end().to_string();
        if values.is_empty() {
            self.description = base;
        } else {
            self.description = format!("{base} (e.g., {})", values.join(", "));
        }
        self.example_values = extract_value_examples(&self.description);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSpec {
    pub kind: ParamType,
    pub description: String,
}

/// One tool of the pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub field_path: String,
    pub parameters: IndexMap<String, ParameterSpec>,
    pub required: Vec<String>,
    pub responses: IndexMap<String, ResponseSpec>,
    /// Keys outside the template, carried through untouched.
    pub extra: Map<String, Value>,
}

impl ToolSpec {
    /// Parses and validates a raw JSON candidate.
    pub fn from_value(raw: &Value, opts: &ValidationOptions) -> Result<ToolSpec, ValidationReport> {
        let report = validate_tool(raw, opts);
        if !report.ok {
            return Err(report);
        }
        // validate_tool has checked every shape assumption below
        let obj = raw.as_object().expect("validated object");
        let text = |k: &str| obj[k].as_str().unwrap_or_default().to_string();
        let mut parameters = IndexMap::new();
        for (name, spec) in obj["parameters"].as_object().expect("validated") {
            let kind = ParamType::parse(spec["type"].as_str().unwrap_or_default()).expect("validated");
            let description = spec["description"].as_str().unwrap_or_default();
            parameters.insert(name.clone(), ParameterSpec::new(name.clone(), kind, description));
        }
        let mut responses = IndexMap::new();
        for (name, spec) in obj["responses"].as_object().expect("validated") {
            let kind = ParamType::parse(spec["type"].as_str().unwrap_or_default()).expect("validated");
            let description = spec["description"].as_str().unwrap_or_default().to_string();
            responses.insert(name.clone(), ResponseSpec { kind, description });
        }
        let required = obj["required"]
            .as_array()
            .expect("validated")
            .iter()
            .filter_map(|v| v.as_str().map(str::to_string))
            .collect();
        let extra = obj
            .iter()
            .filter(|(k, _)| !TOOL_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(ToolSpec {
            name: text("api_name"),
            description: text("api_description"),
            field_path: text("field"),
            parameters,
            required,
            responses,
            extra,
        })
    }

    pub fn to_value(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("api_name".into(), Value::String(self.name.clone()));
        obj.insert("api_description".into(), Value::String(self.description.clone()));
        obj.insert("field".into(), Value::String(self.field_path.clone()));
        obj.insert("parameters".into(), self.parameters_value());
        obj.insert(
            "required".into(),
            Value::Array(self.required.iter().cloned().map(Value::String).collect()),
        );
        obj.insert("responses".into(), self.responses_value());
        for (k, v) in &self.extra {
            obj.insert(k.clone(), v.clone());
        }
        Value::Object(obj)
    }

    /// The tool as presented to a model: the template keys minus `field`.
    pub fn to_prompt_value(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("api_name".into(), Value::String(self.name.clone()));
        obj.insert("api_description".into(), Value::String(self.description.clone()));
        obj.insert("parameters".into(), self.parameters_value());
        obj.insert(
            "required".into(),
            Value::Array(self.required.iter().cloned().map(Value::String).collect()),
        );
        obj.insert("responses".into(), self.responses_value());
        Value::Object(obj)
    }

    fn parameters_value(&self) -> Value {
        let mut params = Map::new();
        for (name, p) in &self.parameters {
            params.insert(name.clone(), typed_entry(p.kind, &p.description));
        }
        Value::Object(params)
    }

    fn responses_value(&self) -> Value {
        let mut out = Map::new();
        for (name, r) in &self.responses {
            out.insert(name.clone(), typed_entry(r.kind, &r.description));
        }
        Value::Object(out)
    }

    pub fn is_required(&self, param: &str) -> bool {
        self.required.iter().any(|r| r == param)
    }

    /// Required parameters in `required` order.
    pub fn required_params(&self) -> impl Iterator<Item = &ParameterSpec> {
        self.required.iter().filter_map(|r| self.parameters.get(r))
    }
}

fn typed_entry(kind: ParamType, description: &str) -> Value {
    let mut m = Map::new();
    m.insert("type".into(), Value::String(kind.as_str().into()));
    m.insert("description".into(), Value::String(description.into()));
    Value::Object(m)
}

const TOOL_KEYS: [&str; 6] = [
    "api_name",
    "api_description",
    "field",
    "parameters",
    "required",
    "responses",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationOptions {
    pub allow_empty_responses: bool,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            allow_empty_responses: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "code", content = "detail", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ToolViolation {
    NotAnObject,
    MissingKey(String),
    WrongKeyType(String),
    EmptyName,
    BadFieldPath(String),
    EmptyParamName,
    UnknownParamType { param: String, kind: String },
    RequiredParamMissing(String),
    EmptyResponses,
}

impl ToolViolation {
    pub fn code(&self) -> &'static str {
        match self {
            ToolViolation::NotAnObject => "NOT_AN_OBJECT",
            ToolViolation::MissingKey(_) => "MISSING_KEY",
            ToolViolation::WrongKeyType(_) => "WRONG_KEY_TYPE",
            ToolViolation::EmptyName => "EMPTY_NAME",
            ToolViolation::BadFieldPath(_) => "BAD_FIELD_PATH",
            ToolViolation::EmptyParamName => "EMPTY_PARAM_NAME",
            ToolViolation::UnknownParamType { .. } => "UNKNOWN_PARAM_TYPE",
            ToolViolation::RequiredParamMissing(_) => "REQUIRED_PARAM_MISSING",
            ToolViolation::EmptyResponses => "EMPTY_RESPONSES",
        }
    }
}

impl fmt::Display for ToolViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ToolViolation::MissingKey(k) | ToolViolation::WrongKeyType(k) => {
                write!(f, "{} ({k})", self.code())
            }
            ToolViolation::BadFieldPath(p) => write!(f, "{} ({p:?})", self.code()),
            ToolViolation::UnknownParamType { param, kind } => {
                write!(f, "{} ({param}: {kind:?})", self.code())
            }
            ToolViolation::RequiredParamMissing(p) => write!(f, "{} ({p})", self.code()),
            _ => f.write_str(self.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<ToolViolation>,
}

impl ValidationReport {
    pub fn codes(&self) -> Vec<&'static str> {
        self.violations.iter().map(ToolViolation::code).collect()
    }
}

/// Checks every tool-template rule and reports all failures, not just the first.
pub fn validate_tool(raw: &Value, opts: &ValidationOptions) -> ValidationReport {
    let mut violations = Vec::new();
    let Some(obj) = raw.as_object() else {
        return ValidationReport {
            ok: false,
            violations: vec![ToolViolation::NotAnObject],
        };
    };

    for key in ["api_name", "api_description", "field"] {
        match obj.get(key) {
            None => violations.push(ToolViolation::MissingKey(key.into())),
            Some(Value::String(_)) => {}
            Some(_) => violations.push(ToolViolation::WrongKeyType(key.into())),
        }
    }
    if let Some(Value::String(name)) = obj.get("api_name") {
        if name.trim().is_empty() {
            violations.push(ToolViolation::EmptyName);
        }
    }
    if let Some(Value::String(path)) = obj.get("field") {
        if !valid_field_path(path) {
            violations.push(ToolViolation::BadFieldPath(path.clone()));
        }
    }

    let params = typed_map(obj, "parameters", &mut violations);
    let responses = typed_map(obj, "responses", &mut violations);
    if let Some(responses) = &responses {
        if responses.is_empty() && !opts.allow_empty_responses {
            violations.push(ToolViolation::EmptyResponses);
        }
    }

    match obj.get("required") {
        None => violations.push(ToolViolation::MissingKey("required".into())),
        Some(Value::Array(items)) => {
            for item in items {
                match item.as_str() {
                    Some(name) => {
                        if let Some(params) = &params {
                            if !params.contains_key(name) {
                                violations.push(ToolViolation::RequiredParamMissing(name.into()));
                            }
                        }
                    }
                    None => violations.push(ToolViolation::WrongKeyType("required".into())),
                }
            }
        }
        Some(_) => violations.push(ToolViolation::WrongKeyType("required".into())),
    }

    ValidationReport {
        ok: violations.is_empty(),
        violations,
    }
}

/// Validates a `{name: {"type", "description"}}` map, returning it when its
/// outer shape is usable so later rules can still run.
fn typed_map<'a>(
    obj: &'a Map<String, Value>,
    key: &str,
    violations: &mut Vec<ToolViolation>,
) -> Option<&'a Map<String, Value>> {
    let map = match obj.get(key) {
        None => {
            violations.push(ToolViolation::MissingKey(key.into()));
            return None;
        }
        Some(Value::Object(m)) => m,
        Some(_) => {
            violations.push(ToolViolation::WrongKeyType(key.into()));
            return None;
        }
    };
    for (name, spec) in map {
        if name.trim().is_empty() {
            violations.push(ToolViolation::EmptyParamName);
        }
        let Some(spec) = spec.as_object() else {
            violations.push(ToolViolation::WrongKeyType(format!("{key}.{name}")));
            continue;
        };
        match spec.get("type") {
            Some(Value::String(kind)) => {
                if ParamType::parse(kind).is_none() {
                    violations.push(ToolViolation::UnknownParamType {
                        param: name.clone(),
                        kind: kind.clone(),
                    });
                }
            }
            Some(_) => violations.push(ToolViolation::WrongKeyType(format!("{key}.{name}.type"))),
            None => violations.push(ToolViolation::MissingKey(format!("{key}.{name}.type"))),
        }
        match spec.get("description") {
            Some(Value::String(_)) => {}
            Some(_) => violations.push(ToolViolation::WrongKeyType(format!(
                "{key}.{name}.description"
            ))),
            None => violations.push(ToolViolation::MissingKey(format!("{key}.{name}.description"))),
        }
    }
    Some(map)
}

pub fn valid_field_path(path: &str) -> bool {
    let mut parts = path.split('/');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), None) => !a.trim().is_empty() && !b.trim().is_empty(),
        _ => false,
    }
}

/// Dedup key: lowercase name with non-alphanumerics removed.
pub fn canonical_key(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Returns the values of a terminal `(e.g., a, b, ...)` clause.
///
/// Accepts `e.g.,` and `e.g. ,` (any case, optional whitespace after the
/// parenthesis). A trailing `...` token is dropped. Anything else is prose.
pub fn extract_value_examples(description: &str) -> Vec<String> {
    match example_clause(description) {
        Some((_, body)) => body
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty() && *v != "..." && *v != "…")
            .filter(|v| !v.contains("...") && balanced(v))
            .map(str::to_string)
            .collect(),
        None => Vec::new(),
    }
}

fn strip_example_clause(description: &str) -> &str {
    match example_clause(description) {
        Some((start, _)) => &description[..start],
        None => description,
    }
}

/// Locates the terminal clause; returns (byte offset of '(', clause body).
fn example_clause(description: &str) -> Option<(usize, &str)> {
    let trimmed = description.trim_end();
    let trimmed = trimmed.strip_suffix('.').unwrap_or(trimmed).trim_end();
    let inner_end = trimmed.len().checked_sub(1)?;
    if !trimmed.ends_with(')') {
        return None;
    }
    // walk back to the matching '('
    let mut depth = 0usize;
    let mut open = None;
    for (i, c) in trimmed.char_indices().rev() {
        match c {
            ')' => depth += 1,
            '(' => {
                depth -= 1;
                if depth == 0 {
                    open = Some(i);
                    break;
                }
            }
            _ => {}
        }
    }
    let open = open?;
    let inside = trimmed[open + 1..inner_end].trim_start();
    let lower = inside.to_ascii_lowercase();
    let rest = if lower.starts_with("e.g.,") {
        &inside[5..]
    } else if lower.starts_with("e.g. ,") {
        &inside[6..]
    } else {
        return None;
    };
    Some((open, rest))
}

fn balanced(v: &str) -> bool {
    let mut depth = 0i32;
    for c in v.chars() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            _ => {}
        }
    }
    depth == 0
}

/// Two-level taxonomy of fields and subfields.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldTree {
    pub fields: Vec<FieldEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldEntry {
    pub name: String,
    pub subfields: Vec<String>,
}

impl FieldTree {
    /// Adds a field unless one with the same case-insensitive name exists.
    /// Returns the index of the (possibly pre-existing) entry.
    pub fn add_field(&mut self, name: &str) -> usize {
        let name = name.trim();
        if let Some(i) = self
            .fields
            .iter()
            .position(|f| f.name.to_lowercase() == name.to_lowercase())
        {
            return i;
        }
        self.fields.push(FieldEntry {
            name: name.to_string(),
            subfields: Vec::new(),
        });
        self.fields.len() - 1
    }

    pub fn add_subfield(&mut self, field: usize, subfield: &str) -> bool {
        let subfield = subfield.trim();
        let entry = &mut self.fields[field];
        if subfield.is_empty()
            || entry
                .subfields
                .iter()
                .any(|s| s.to_lowercase() == subfield.to_lowercase())
        {
            return false;
        }
        entry.subfields.push(subfield.to_string());
        true
    }

    pub fn subfield_count(&self) -> usize {
        self.fields.iter().map(|f| f.subfields.len()).sum()
    }

    /// (field, subfield) pairs in tree order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.fields
            .iter()
            .flat_map(|f| f.subfields.iter().map(move |s| (f.name.as_str(), s.as_str())))
    }

    pub fn is_valid(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.fields.iter().all(|f| {
            let mut subs = std::collections::HashSet::new();
            seen.insert(f.name.as_str()) && f.subfields.iter().all(|s| subs.insert(s.as_str()))
        })
    }

    pub fn load(path: &Path) -> Result<FieldTree, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tree: FieldTree = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        if !tree.is_valid() {
            return Err(Error::Invalid(format!(
                "{}: duplicate field or subfield names",
                path.display()
            )));
        }
        Ok(tree)
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let mut text = serde_json::to_string_pretty(self).expect("serializable");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Added,
    Duplicate,
}

/// Insertion-ordered pool with no two tools sharing a canonical key.
///
/// Mutation is single-writer; share it immutably once a generation phase is done.
#[derive(Debug, Clone, Default)]
pub struct ToolPool {
    tools: Vec<ToolSpec>,
    index: std::collections::HashMap<String, usize>,
}

impl ToolPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_tool(&mut self, tool: ToolSpec) -> InsertOutcome {
        let key = canonical_key(&tool.name);
        if self.index.contains_key(&key) {
            return InsertOutcome::Duplicate;
        }
        self.index.insert(key, self.tools.len());
        self.tools.push(tool);
        InsertOutcome::Added
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    /// Exact-name lookup.
    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.index
            .get(&canonical_key(name))
            .map(|&i| &self.tools[i])
            .filter(|t| t.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index
            .get(&canonical_key(name))
            .copied()
            .filter(|&i| self.tools[i].name == name)
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn tools_mut(&mut self) -> &mut [ToolSpec] {
        &mut self.tools
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ToolSpec> {
        self.tools.iter()
    }

    /// Strict load: any invalid line is an error.
    pub fn load_jsonl(path: &Path, opts: &ValidationOptions) -> Result<ToolPool, Error> {
        let (pool, log) = Self::load_jsonl_lenient(path, opts)?;
        if let Some((line, report)) = log.rejected.first() {
            let codes: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::Invalid(format!(
                "{}:{line}: invalid tool: {}",
                path.display(),
                codes.join(", ")
            )));
        }
        Ok(pool)
    }

    /// Loads what it can; invalid and duplicate lines are reported in the log.
    pub fn load_jsonl_lenient(
        path: &Path,
        opts: &ValidationOptions,
    ) -> Result<(ToolPool, LoadLog), Error> {
        let mut pool = ToolPool::new();
        let mut log = LoadLog::default();
        for (line, value) in read_jsonl(path)? {
            match ToolSpec::from_value(&value, opts) {
                Ok(tool) => {
                    let name = tool.name.clone();
                    if pool.insert_tool(tool) == InsertOutcome::Duplicate {
                        log.duplicates.push((line, name));
                    }
                }
                Err(report) => log.rejected.push((line, report)),
            }
        }
        Ok((pool, log))
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), Error> {
        let mut out = String::new();
        for tool in &self.tools {
            out.push_str(&serde_json::to_string(&tool.to_value()).expect("serializable"));
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())
    }
}

impl<'a> IntoIterator for &'a ToolPool {
    type Item = &'a ToolSpec;
    type IntoIter = std::slice::Iter<'a, ToolSpec>;
    fn into_iter(self) -> Self::IntoIter {
        self.tools.iter()
    }
}

/// What a lenient load skipped, by 1-based line number.
#[derive(Debug, Default)]
pub struct LoadLog {
    pub rejected: Vec<(usize, ValidationReport)>,
    pub duplicates: Vec<(usize, String)>,
}
