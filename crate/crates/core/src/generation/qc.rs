//! The acceptance gate for generated instances.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::calling::{is_nested, validate_sequence, Literal, ParamValue, SequenceMode};
use crate::generation::{Category, Instance};
use crate::schema::ToolPool;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcViolation {
    pub code: String,
    pub detail: String,
}

impl QcViolation {
    pub fn new(code: &str, detail: impl Into<String>) -> Self {
        QcViolation {
            code: code.to_string(),
            detail: detail.into(),
        }
    }
}

impl fmt::Display for QcViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.detail.is_empty() {
            f.write_str(&self.code)
        } else {
            write!(f, "{} ({})", self.code, self.detail)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcReport {
    pub ok: bool,
    pub violations: Vec<QcViolation>,
}

impl QcReport {
    pub fn codes(&self) -> Vec<&str> {
        self.violations.iter().map(|v| v.code.as_str()).collect()
    }
}

/// Checks, each reported independently: the calling validates against the
/// pool with no blanks; every literal value is mentioned in the query; no
/// called tool's name appears in the query; the query is non-empty; the
/// category and nested flag agree with the calling.
pub fn qc_instance(instance: &Instance, pool: &ToolPool) -> QcReport {
    let mut violations: Vec<QcViolation> = validate_sequence(&instance.calling, pool, SequenceMode::Instance)
        .violations
        .iter()
        .map(|v| QcViolation::new(v.code(), v.to_string()))
        .collect();

    let query = collapse(&instance.query).to_lowercase();
    for (i, call) in instance.calling.calls.iter().enumerate() {
        for (name, value) in &call.parameters {
            let ParamValue::Literal(lit) = value else { continue };
            for text in mention_texts(lit) {
                if !query.contains(&collapse(&text).to_lowercase()) {
                    violations.push(QcViolation::new(
                        "VALUE_NOT_MENTIONED",
                        format!("call {i}: {name} = {text:?}"),
                    ));
                }
            }
        }
    }

    let mut leaked: Vec<&str> = Vec::new();
    for api in instance.calling.tool_names() {
        if !api.is_empty() && instance.query.contains(api) && !leaked.contains(&api) {
            leaked.push(api);
            violations.push(QcViolation::new("API_NAME_LEAK", api));
        }
    }

    if instance.query.trim().is_empty() {
        violations.push(QcViolation::new("EMPTY_QUERY", ""));
    }
    let n = instance.calling.len();
    let category_ok = match instance.category {
        Category::Single => n == 1,
        Category::Multiple => n >= 2,
    };
    if !category_ok {
        violations.push(QcViolation::new(
            "CATEGORY_MISMATCH",
            format!("{} with {n} calls", instance.category.as_str()),
        ));
    }
    if instance.nested != is_nested(&instance.calling) {
        violations.push(QcViolation::new("NESTED_FLAG_MISMATCH", ""));
    }

    QcReport {
        ok: violations.is_empty(),
        violations,
    }
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The strings a query must contain for a literal: the value itself, or
/// each element of an array or object. Placeholder strings inside arrays are
/// references and need no mention.
fn mention_texts(lit: &Literal) -> Vec<String> {
    match lit {
        Literal::Other(v) => {
            let mut out = Vec::new();
            value_texts(v, &mut out);
            out
        }
        other => vec![other.render()],
    }
}

fn value_texts(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Null => {}
        Value::Array(items) => items.iter().for_each(|x| value_texts(x, out)),
        Value::Object(map) => map.values().for_each(|x| value_texts(x, out)),
        Value::String(s) if crate::calling::parse_placeholder(s).is_some() || s == crate::calling::BLANK => {}
        Value::String(s) => out.push(s.clone()),
        other => match ParamValue::from_value(other) {
            Ok(ParamValue::Literal(l)) => out.push(l.render()),
            _ => out.push(other.to_string()),
        },
    }
}
