//! Tool-calling sequences with `API_call_<k>` response placeholders.
//!
//! A parameter value is a literal, the template blank `"___"`, or a reference
//! to a response placeholder declared by an earlier call. References may only
//! point backwards in call order, so the identity order is always a valid
//! topological order of the reference graph.

use std::collections::HashMap;
use std::fmt;

use indexmap::IndexMap;
use serde::Serialize;
use serde_json::{Map, Number, Value};

use crate::schema::{ToolPool, ToolSpec};

pub const BLANK: &str = "___";
pub const PLACEHOLDER_PREFIX: &str = "API_call_";

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    /// Arrays, objects, null and out-of-range numbers, kept verbatim.
    Other(Value),
}

impl Literal {
    pub fn to_value(&self) -> Value {
        match self {
            Literal::Str(s) => Value::String(s.clone()),
            Literal::Int(i) => Value::Number((*i).into()),
            Literal::Float(f) => Number::from_f64(*f).map(Value::Number).unwrap_or(Value::Null),
            Literal::Bool(b) => Value::Bool(*b),
            Literal::Other(v) => v.clone(),
        }
    }

    /// The text a query is expected to contain for this value.
    pub fn render(&self) -> String {
        match self {
            Literal::Str(s) => s.clone(),
            Literal::Int(i) => i.to_string(),
            Literal::Float(f) => f.to_string(),
            Literal::Bool(b) => b.to_string(),
            Literal::Other(v) => v.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Literal(Literal),
    Blank,
    Ref(usize),
}

impl ParamValue {
    pub fn text(s: impl Into<String>) -> Self {
        ParamValue::Literal(Literal::Str(s.into()))
    }

    pub fn from_value(v: &Value) -> Result<ParamValue, String> {
        Ok(match v {
            Value::String(s) if s == BLANK => ParamValue::Blank,
            Value::String(s) => match parse_placeholder(s) {
                Some(Ok(k)) => ParamValue::Ref(k),
                Some(Err(())) => return Err(s.clone()),
                None => ParamValue::Literal(Literal::Str(s.clone())),
            },
            Value::Bool(b) => ParamValue::Literal(Literal::Bool(*b)),
            Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    ParamValue::Literal(Literal::Int(i))
                } else if n.is_f64() {
                    ParamValue::Literal(Literal::Float(n.as_f64().expect("f64")))
                } else {
                    ParamValue::Literal(Literal::Other(v.clone()))
                }
            }
            other => ParamValue::Literal(Literal::Other(other.clone())),
        })
    }

    pub fn to_value(&self) -> Value {
        match self {
            ParamValue::Literal(l) => l.to_value(),
            ParamValue::Blank => Value::String(BLANK.into()),
            ParamValue::Ref(k) => Value::String(placeholder(*k)),
        }
    }
}

pub fn placeholder(k: usize) -> String {
    format!("{PLACEHOLDER_PREFIX}{k}")
}

/// `None` if `s` is not placeholder-shaped at all, `Some(Err)` if it starts
/// with the prefix but the index is malformed.
pub fn parse_placeholder(s: &str) -> Option<Result<usize, ()>> {
    let rest = s.strip_prefix(PLACEHOLDER_PREFIX)?;
    let well_formed = !rest.is_empty()
        && rest.bytes().all(|b| b.is_ascii_digit())
        && (rest == "0" || !rest.starts_with('0'));
    Some(if well_formed { rest.parse().map_err(|_| ()) } else { Err(()) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolCall {
    pub api: String,
    pub parameters: IndexMap<String, ParamValue>,
    /// Declared placeholder indices, in order.
    pub responses: Vec<usize>,
}

impl ToolCall {
    pub fn refs(&self) -> impl Iterator<Item = (&str, usize)> {
        self.parameters.iter().filter_map(|(name, v)| match v {
            ParamValue::Ref(k) => Some((name.as_str(), *k)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CallSequence {
    pub calls: Vec<ToolCall>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CallingError {
    #[error("EMPTY_SELECTION: no tools to build a template from")]
    EmptySelection,
    #[error("SCHEMA_ERROR at {path}: {reason}")]
    Schema { path: String, reason: String },
    #[error("PLACEHOLDER_SYNTAX at {path}: {label:?}")]
    PlaceholderSyntax { path: String, label: String },
    #[error("DANGLING_REF: API_call_{0} is never declared")]
    DanglingRef(usize),
}

impl CallingError {
    pub fn code(&self) -> &'static str {
        match self {
            CallingError::EmptySelection => "EMPTY_SELECTION",
            CallingError::Schema { .. } => "SCHEMA_ERROR",
            CallingError::PlaceholderSyntax { .. } => "PLACEHOLDER_SYNTAX",
            CallingError::DanglingRef(_) => "DANGLING_REF",
        }
    }
}

impl CallSequence {
    pub fn new(calls: Vec<ToolCall>) -> Self {
        CallSequence { calls }
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    pub fn to_value(&self) -> Value {
        Value::Array(
            self.calls
                .iter()
                .map(|call| {
                    let mut obj = Map::new();
                    obj.insert("api".into(), Value::String(call.api.clone()));
                    let params = call
                        .parameters
                        .iter()
                        .map(|(k, v)| (k.clone(), v.to_value()))
                        .collect();
                    obj.insert("parameters".into(), Value::Object(params));
                    obj.insert(
                        "responses".into(),
                        Value::Array(
                            call.responses.iter().map(|&k| Value::String(placeholder(k))).collect(),
                        ),
                    );
                    Value::Object(obj)
                })
                .collect(),
        )
    }

    pub fn has_blank(&self) -> bool {
        self.calls
            .iter()
            .any(|c| c.parameters.values().any(|v| *v == ParamValue::Blank))
    }

    pub fn tool_names(&self) -> impl Iterator<Item = &str> {
        self.calls.iter().map(|c| c.api.as_str())
    }
}

impl Serialize for CallSequence {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(serializer)
    }
}

impl<'de> serde::Deserialize<'de> for CallSequence {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = Value::deserialize(deserializer)?;
        parse_call_sequence(&raw).map_err(serde::de::Error::custom)
    }
}

/// Blank template over the chosen tools: required parameters set to `___`,
/// responses numbered by one global counter.
pub fn build_template(tools: &[&ToolSpec]) -> Result<CallSequence, CallingError> {
    if tools.is_empty() {
        return Err(CallingError::EmptySelection);
    }
    let mut next = 0usize;
    let calls = tools
        .iter()
        .map(|tool| {
            let parameters = tool
                .required
                .iter()
                .map(|name| (name.clone(), ParamValue::Blank))
                .collect();
            let responses = (next..next + tool.responses.len()).collect();
            next += tool.responses.len();
            ToolCall {
                api: tool.name.clone(),
                parameters,
                responses,
            }
        })
        .collect();
    Ok(CallSequence { calls })
}

pub fn parse_call_sequence(raw: &Value) -> Result<CallSequence, CallingError> {
    let schema = |path: String, reason: &str| CallingError::Schema {
        path,
        reason: reason.to_string(),
    };
    let items = raw
        .as_array()
        .ok_or_else(|| schema("$".into(), "expected an array of callings"))?;
    let mut calls = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let obj = item
            .as_object()
            .ok_or_else(|| schema(format!("[{i}]"), "expected an object"))?;
        let api = match obj.get("api") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(schema(format!("[{i}].api"), "expected a string")),
            None => return Err(schema(format!("[{i}]"), "missing \"api\"")),
        };
        let params = match obj.get("parameters") {
            Some(Value::Object(m)) => m,
            Some(_) => return Err(schema(format!("[{i}].parameters"), "expected an object")),
            None => return Err(schema(format!("[{i}]"), "missing \"parameters\"")),
        };
        let mut parameters = IndexMap::with_capacity(params.len());
        for (name, v) in params {
            let value = ParamValue::from_value(v).map_err(|label| CallingError::PlaceholderSyntax {
                path: format!("[{i}].parameters.{name}"),
                label,
            })?;
            parameters.insert(name.clone(), value);
        }
        let mut responses = Vec::new();
        match obj.get("responses") {
            None | Some(Value::Null) => {}
            Some(Value::Array(labels)) => {
                for (j, label) in labels.iter().enumerate() {
                    let path = format!("[{i}].responses[{j}]");
                    let text = label
                        .as_str()
                        .ok_or_else(|| schema(path.clone(), "expected a placeholder string"))?;
                    match parse_placeholder(text) {
                        Some(Ok(k)) => responses.push(k),
                        _ => {
                            return Err(CallingError::PlaceholderSyntax {
                                path,
                                label: text.to_string(),
                            })
                        }
                    }
                }
            }
            Some(_) => return Err(schema(format!("[{i}].responses"), "expected an array")),
        }
        calls.push(ToolCall {
            api,
            parameters,
            responses,
        });
    }
    Ok(CallSequence { calls })
}

/// Whether blanks are legal (templates) or not (final instances).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceMode {
    Template,
    Instance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "code", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SequenceViolation {
    UnknownTool { call: usize, api: String },
    UnknownParam { call: usize, param: String },
    MissingRequired { call: usize, param: String },
    BlankInInstance { call: usize, param: String },
    PlaceholderNumbering { expected: usize, found: usize },
    DanglingRef { call: usize, param: String, target: usize },
    SelfReference { call: usize, param: String, target: usize },
    ForwardRefOnly { call: usize, param: String, target: usize },
}

impl SequenceViolation {
    pub fn code(&self) -> &'static str {
        match self {
            SequenceViolation::UnknownTool { .. } => "UNKNOWN_TOOL",
            SequenceViolation::UnknownParam { .. } => "UNKNOWN_PARAM",
            SequenceViolation::MissingRequired { .. } => "MISSING_REQUIRED",
            SequenceViolation::BlankInInstance { .. } => "BLANK_IN_INSTANCE",
            SequenceViolation::PlaceholderNumbering { .. } => "PLACEHOLDER_NUMBERING",
            SequenceViolation::DanglingRef { .. } => "DANGLING_REF",
            SequenceViolation::SelfReference { .. } => "SELF_REFERENCE",
            SequenceViolation::ForwardRefOnly { .. } => "FORWARD_REF_ONLY",
        }
    }
}

impl fmt::Display for SequenceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SequenceViolation::UnknownTool { call, api } => {
                write!(f, "{} (call {call}: {api})", self.code())
            }
            SequenceViolation::UnknownParam { call, param }
            | SequenceViolation::MissingRequired { call, param }
            | SequenceViolation::BlankInInstance { call, param } => {
                write!(f, "{} (call {call}: {param})", self.code())
            }
            SequenceViolation::PlaceholderNumbering { expected, found } => write!(
                f,
                "{} (expected API_call_{expected}, found API_call_{found})",
                self.code()
            ),
            SequenceViolation::DanglingRef { call, param, target }
            | SequenceViolation::SelfReference { call, param, target }
            | SequenceViolation::ForwardRefOnly { call, param, target } => write!(
                f,
                "{} (call {call}: {param} -> API_call_{target})",
                self.code()
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SequenceReport {
    pub ok: bool,
    pub violations: Vec<SequenceViolation>,
}

impl SequenceReport {
    pub fn codes(&self) -> Vec<&'static str> {
        self.violations.iter().map(SequenceViolation::code).collect()
    }
}

/// Runs the pool checks (tools, parameter names, required parameters) and
/// the structural checks (numbering, reference direction), in that order.
pub fn validate_sequence(seq: &CallSequence, pool: &ToolPool, mode: SequenceMode) -> SequenceReport {
    let mut violations = Vec::new();

    for (i, call) in seq.calls.iter().enumerate() {
        if pool.get(&call.api).is_none() {
            violations.push(SequenceViolation::UnknownTool {
                call: i,
                api: call.api.clone(),
            });
        }
    }
    for (i, call) in seq.calls.iter().enumerate() {
        let Some(tool) = pool.get(&call.api) else { continue };
        for name in call.parameters.keys() {
            if !tool.parameters.contains_key(name) {
                violations.push(SequenceViolation::UnknownParam {
                    call: i,
                    param: name.clone(),
                });
            }
        }
    }
    for (i, call) in seq.calls.iter().enumerate() {
        if let Some(tool) = pool.get(&call.api) {
            for name in &tool.required {
                if !call.parameters.contains_key(name) {
                    violations.push(SequenceViolation::MissingRequired {
                        call: i,
                        param: name.clone(),
                    });
                }
            }
        }
        // a blank required value is reported here rather than as missing
        if mode == SequenceMode::Instance {
            for (name, v) in &call.parameters {
                if *v == ParamValue::Blank {
                    violations.push(SequenceViolation::BlankInInstance {
                        call: i,
                        param: name.clone(),
                    });
                }
            }
        }
    }
    violations.extend(structural_violations(seq));

    SequenceReport {
        ok: violations.is_empty(),
        violations,
    }
}

/// Numbering and reference-direction checks; needs no pool.
pub fn structural_violations(seq: &CallSequence) -> Vec<SequenceViolation> {
    let mut violations = Vec::new();
    let mut expected = 0usize;
    let mut declared_by: HashMap<usize, usize> = HashMap::new();
    let mut numbering_ok = true;
    for (i, call) in seq.calls.iter().enumerate() {
        for &label in &call.responses {
            if numbering_ok && label != expected {
                violations.push(SequenceViolation::PlaceholderNumbering {
                    expected,
                    found: label,
                });
                numbering_ok = false;
            }
            expected += 1;
            declared_by.entry(label).or_insert(i);
        }
    }
    for (i, call) in seq.calls.iter().enumerate() {
        for (param, target) in call.refs() {
            let param = param.to_string();
            match declared_by.get(&target) {
                None => violations.push(SequenceViolation::DanglingRef { call: i, param, target }),
                Some(&d) if d == i => {
                    violations.push(SequenceViolation::SelfReference { call: i, param, target })
                }
                Some(&d) if d > i => {
                    violations.push(SequenceViolation::ForwardRefOnly { call: i, param, target })
                }
                Some(_) => {}
            }
        }
    }
    violations
}

pub fn is_nested(seq: &CallSequence) -> bool {
    seq.calls.iter().any(|c| c.refs().next().is_some())
}

/// Relabels placeholders to 0..m-1 in first-declaration order and rewrites
/// references through the same mapping. A label declared twice gets a fresh
/// index at each declaration; references resolve to the first one.
pub fn canonical_renumber(seq: &CallSequence) -> Result<CallSequence, CallingError> {
    let mut mapping: HashMap<usize, usize> = HashMap::new();
    let mut next = 0usize;
    let mut calls: Vec<ToolCall> = seq
        .calls
        .iter()
        .map(|call| {
            let responses = call
                .responses
                .iter()
                .map(|&label| {
                    let fresh = next;
                    next += 1;
                    mapping.entry(label).or_insert(fresh);
                    fresh
                })
                .collect();
            ToolCall {
                api: call.api.clone(),
                parameters: call.parameters.clone(),
                responses,
            }
        })
        .collect();
    for call in &mut calls {
        for value in call.parameters.values_mut() {
            if let ParamValue::Ref(k) = value {
                *k = *mapping.get(k).ok_or(CallingError::DanglingRef(*k))?;
            }
        }
    }
    Ok(CallSequence { calls })
}
