//! Scoring model outputs against gold instances: Format ACC, Tool P/R/F1,
//! Parameter P/R/F1 (micro-averaged), per-split reports and an error
//! taxonomy for tool selection and parameter filling.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::calling::{canonical_renumber, parse_call_sequence, structural_violations, CallSequence, CallingError, Literal, ParamValue, BLANK};
use crate::generation::extract::extract_first_json;

mod corpus;

pub use corpus::{
    classify_errors, evaluate_corpus, evaluate_corpus_with_candidates, render_markdown, EvalOptions, EvalReport,
    InstanceResult, MetricBlock, ERROR_CATEGORIES,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    #[serde(rename = "output")]
    pub raw_output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("ID_MISMATCH: prediction id {0:?} has no gold instance")]
    IdMismatch(String),
    #[error("DUPLICATE_ID: prediction id {0:?} appears more than once")]
    DuplicateId(String),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::IdMismatch(_) => "ID_MISMATCH",
            EvalError::DuplicateId(_) => "DUPLICATE_ID",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("NO_JSON: no JSON value in the output")]
    NoJson,
    #[error("SCHEMA: {0}")]
    Schema(String),
    #[error("PLACEHOLDER: {0}")]
    Placeholder(String),
}

impl FormatError {
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::NoJson => "NO_JSON",
            FormatError::Schema(_) => "SCHEMA",
            FormatError::Placeholder(_) => "PLACEHOLDER",
        }
    }
}

/// Extracts, parses and renumbers a calling list from raw model output.
/// Success means the output is format-correct: a JSON list of calls whose
/// placeholders are well formed and only point backwards.
pub fn parse_prediction(raw_output: &str) -> Result<CallSequence, FormatError> {
    let value = extract_first_json(raw_output).map_err(|_| FormatError::NoJson)?;
    let seq = parse_call_sequence(&value).map_err(|e| match e {
        CallingError::PlaceholderSyntax { .. } => FormatError::Placeholder(e.to_string()),
        other => FormatError::Schema(other.to_string()),
    })?;
    let seq = canonical_renumber(&seq).map_err(|e| FormatError::Placeholder(e.to_string()))?;
    if let Some(v) = structural_violations(&seq).first() {
        return Err(FormatError::Placeholder(v.to_string()));
    }
    Ok(seq)
}

/// The lenient reading: any JSON counts as format-correct, and whatever
/// calls can be read from it are scored.
pub fn parse_prediction_lenient(raw_output: &str) -> Result<CallSequence, FormatError> {
    let value = extract_first_json(raw_output).map_err(|_| FormatError::NoJson)?;
    if let Ok(seq) = parse_call_sequence(&value) {
        return Ok(canonical_renumber(&seq).unwrap_or(seq));
    }
    let items = match value {
        Value::Array(items) => items,
        obj @ Value::Object(_) => vec![obj],
        _ => Vec::new(),
    };
    let mut calls = Vec::new();
    for item in items {
        if let Ok(mut one) = parse_call_sequence(&Value::Array(vec![item])) {
            calls.append(&mut one.calls);
        }
    }
    let seq = CallSequence::new(calls);
    Ok(canonical_renumber(&seq).unwrap_or(seq))
}

/// Comparison key for a parameter value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NormValue {
    /// Bit pattern of the f64, with -0 folded into 0.
    Num(u64),
    Bool(bool),
    Ref(usize),
    Str(String),
}

fn looks_numeric(t: &str) -> bool {
    t.bytes().any(|b| b.is_ascii_digit())
        && t.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'+' | b'-' | b'.' | b'e' | b'E'))
}

fn num_key(f: f64) -> NormValue {
    NormValue::Num(if f == 0.0 { 0f64.to_bits() } else { f.to_bits() })
}

/// Trims text; numbers compare numerically, booleans case-insensitively,
/// references by index, everything else as exact text.
pub fn normalize_value(v: &ParamValue) -> NormValue {
    match v {
        ParamValue::Ref(k) => NormValue::Ref(*k),
        ParamValue::Blank => NormValue::Str(BLANK.into()),
        ParamValue::Literal(Literal::Int(i)) => num_key(*i as f64),
        ParamValue::Literal(Literal::Float(f)) => num_key(*f),
        ParamValue::Literal(Literal::Bool(b)) => NormValue::Bool(*b),
        ParamValue::Literal(Literal::Str(s)) => normalize_text(s),
        ParamValue::Literal(Literal::Other(Value::Number(n))) => match n.as_f64() {
            Some(f) => num_key(f),
            None => NormValue::Str(n.to_string()),
        },
        ParamValue::Literal(Literal::Other(other)) => NormValue::Str(other.to_string()),
    }
}

fn normalize_text(s: &str) -> NormValue {
    let t = s.trim();
    if looks_numeric(t) {
        if let Ok(f) = t.parse::<f64>() {
            if f.is_finite() {
                return num_key(f);
            }
        }
    }
    if t.eq_ignore_ascii_case("true") {
        return NormValue::Bool(true);
    }
    if t.eq_ignore_ascii_case("false") {
        return NormValue::Bool(false);
    }
    NormValue::Str(t.to_string())
}

/// Raw counts behind the P/R/F1 figures.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub correct_tools: usize,
    pub predicted_tools: usize,
    pub gold_tools: usize,
    pub correct_params: usize,
    pub predicted_params: usize,
    pub gold_params: usize,
}

impl MatchCounts {
    pub fn add(&mut self, o: &MatchCounts) {
        self.correct_tools += o.correct_tools;
        self.predicted_tools += o.predicted_tools;
        self.gold_tools += o.gold_tools;
        self.correct_params += o.correct_params;
        self.predicted_params += o.predicted_params;
        self.gold_params += o.gold_params;
    }

    /// A prediction that scores nothing against `gold`.
    pub fn gold_only(gold: &CallSequence) -> MatchCounts {
        MatchCounts {
            gold_tools: gold.len(),
            gold_params: gold.calls.iter().map(|c| c.parameters.len()).sum(),
            ..Default::default()
        }
    }
}

pub type ParamTriple = (String, String, NormValue);

pub fn param_triples(seq: &CallSequence) -> Vec<ParamTriple> {
    seq.calls
        .iter()
        .flat_map(|c| c.parameters.iter().map(move |(k, v)| (c.api.clone(), k.clone(), normalize_value(v))))
        .collect()
}

fn multiset<T: std::hash::Hash + Eq>(items: impl IntoIterator<Item = T>) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for x in items {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

fn overlap<T: std::hash::Hash + Eq>(a: &HashMap<T, usize>, b: &HashMap<T, usize>) -> usize {
    a.iter().map(|(k, &n)| n.min(b.get(k).copied().unwrap_or(0))).sum()
}

/// Order-insensitive multiset matching of tool names and of
/// (tool, parameter, normalized value) triples.
pub fn match_instance(pred: &CallSequence, gold: &CallSequence) -> MatchCounts {
    let pt = multiset(pred.tool_names());
    let gt = multiset(gold.tool_names());
    let pp = param_triples(pred);
    let gp = param_triples(gold);
    let (pp_len, gp_len) = (pp.len(), gp.len());
    let (pm, gm) = (multiset(pp), multiset(gp));
    MatchCounts {
        correct_tools: overlap(&pt, &gt),
        predicted_tools: pred.len(),
        gold_tools: gold.len(),
        correct_params: overlap(&pm, &gm),
        predicted_params: pp_len,
        gold_params: gp_len,
    }
}

/// `num / den`, or 0 when `den` is 0.
pub fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when both are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}
