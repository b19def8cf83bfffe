use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{f1, match_instance, normalize_value, parse_prediction, parse_prediction_lenient, ratio, EvalError, MatchCounts, Prediction};
use crate::calling::{canonical_renumber, CallSequence};
use crate::generation::{Category, Instance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Format-correct requires a schema-valid calling list; otherwise any
    /// JSON in the output is enough.
    pub strict_format: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { strict_format: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub instances: usize,
    pub format_correct: usize,
    pub format_acc: f64,
    pub tool_p: f64,
    pub tool_r: f64,
    pub tool_f1: f64,
    pub param_p: f64,
    pub param_r: f64,
    pub param_f1: f64,
    pub counts: MatchCounts,
}

impl MetricBlock {
    pub fn from_counts(instances: usize, format_correct: usize, counts: MatchCounts) -> MetricBlock {
        let tool_p = ratio(counts.correct_tools, counts.predicted_tools);
        let tool_r = ratio(counts.correct_tools, counts.gold_tools);
        let param_p = ratio(counts.correct_params, counts.predicted_params);
        let param_r = ratio(counts.correct_params, counts.gold_params);
        MetricBlock {
            instances,
            format_correct,
            format_acc: ratio(format_correct, instances),
            tool_p,
            tool_r,
            tool_f1: f1(tool_p, tool_r),
            param_p,
            param_r,
            param_f1: f1(param_p, param_r),
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub id: String,
    pub category: Category,
    pub nested: bool,
    pub format_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format_error: Option<String>,
    pub counts: MatchCounts,
    pub errors: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_acc: f64,
    pub tool_p: f64,
    pub tool_r: f64,
    pub tool_f1: f64,
    pub param_p: f64,
    pub param_r: f64,
    pub param_f1: f64,
    /// `overall`, `single`, `multiple` and `nested`.
    pub splits: BTreeMap<String, MetricBlock>,
    pub error_breakdown: BTreeMap<String, usize>,
    pub per_instance: Vec<InstanceResult>,
    /// Settings worth auditing: retriever, k, inference prompt, options.
    pub meta: BTreeMap<String, Value>,
}

pub const ERROR_CATEGORIES: [&str; 7] = [
    "MISSED_NOT_RETRIEVED",
    "MISSED_RETRIEVED",
    "HALLUCINATED",
    "WRONG_SELECTION",
    "OMITTED_REQUIRED",
    "OVERFILLED_UNMENTIONED",
    "WRONG_VALUE",
];

/// Error counts for one instance. Without a candidate list every tool
/// counts as retrieved. Parameters are compared between the i-th call of a
/// tool in `pred` and the i-th call of the same tool in `gold`.
pub fn classify_errors(pred: &CallSequence, gold: &CallSequence, candidates: Option<&[String]>) -> BTreeMap<String, usize> {
    let mut out: BTreeMap<String, usize> = ERROR_CATEGORIES.iter().map(|c| (c.to_string(), 0)).collect();
    let retrieved = |name: &str| candidates.is_none_or(|c| c.iter().any(|x| x == name));
    let mut bump = |k: &str| *out.get_mut(k).expect("known category") += 1;

    let mut pred_calls: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, c) in pred.calls.iter().enumerate() {
        pred_calls.entry(c.api.as_str()).or_default().push(i);
    }
    let mut gold_calls: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, c) in gold.calls.iter().enumerate() {
        gold_calls.entry(c.api.as_str()).or_default().push(i);
    }

    let mut seen = HashSet::new();
    for c in &gold.calls {
        let name = c.api.as_str();
        if !seen.insert(name) {
            continue;
        }
        let g = gold_calls[name].len();
        let p = pred_calls.get(name).map_or(0, Vec::len);
        for _ in p.min(g)..g {
            bump(if retrieved(name) { "MISSED_RETRIEVED" } else { "MISSED_NOT_RETRIEVED" });
        }
    }
    let mut seen = HashSet::new();
    for c in &pred.calls {
        let name = c.api.as_str();
        if !seen.insert(name) {
            continue;
        }
        let p = pred_calls[name].len();
        let g = gold_calls.get(name).map_or(0, Vec::len);
        for _ in g.min(p)..p {
            bump(if retrieved(name) { "WRONG_SELECTION" } else { "HALLUCINATED" });
        }
    }

    for (name, pis) in &pred_calls {
        let Some(gis) = gold_calls.get(name) else { continue };
        for (&pi, &gi) in pis.iter().zip(gis) {
            let (pc, gc) = (&pred.calls[pi], &gold.calls[gi]);
            for (k, gv) in &gc.parameters {
                match pc.parameters.get(k) {
                    None => bump("OMITTED_REQUIRED"),
                    Some(pv) if normalize_value(pv) != normalize_value(gv) => bump("WRONG_VALUE"),
                    Some(_) => {}
                }
            }
            for k in pc.parameters.keys() {
                if !gc.parameters.contains_key(k) {
                    bump("OVERFILLED_UNMENTIONED");
                }
            }
        }
    }
    out
}

/// Scores `predictions` against `gold` without candidate lists.
pub fn evaluate_corpus(predictions: &[Prediction], gold: &[Instance], opts: &EvalOptions) -> Result<EvalReport, EvalError> {
    evaluate_corpus_with_candidates(predictions, gold, &HashMap::new(), opts)
}

/// Scores `predictions` against `gold`. Gold instances without a
/// prediction are format failures; `candidates` holds the retrieved tool
/// names per instance id, for the error taxonomy.
pub fn evaluate_corpus_with_candidates(
    predictions: &[Prediction],
    gold: &[Instance],
    candidates: &HashMap<String, Vec<String>>,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let gold_ids: HashSet<&str> = gold.iter().map(|g| g.id.as_str()).collect();
    let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
    for p in predictions {
        if !gold_ids.contains(p.id.as_str()) {
            return Err(EvalError::IdMismatch(p.id.clone()));
        }
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(EvalError::DuplicateId(p.id.clone()));
        }
    }

    let per_instance: Vec<InstanceResult> = gold
        .par_iter()
        .map(|g| {
            let gold_seq = canonical_renumber(&g.calling).unwrap_or_else(|_| g.calling.clone());
            let parsed = match by_id.get(g.id.as_str()) {
                None => Err("MISSING".to_string()),
                Some(p) => if opts.strict_format {
                    parse_prediction(&p.raw_output)
                } else {
                    parse_prediction_lenient(&p.raw_output)
                }
                .map_err(|e| e.code().to_string()),
            };
            let (format_ok, format_error, pred_seq) = match parsed {
                Ok(seq) => (true, None, seq),
                Err(code) => (false, Some(code), CallSequence::default()),
            };
            let counts = if format_ok { match_instance(&pred_seq, &gold_seq) } else { MatchCounts::gold_only(&gold_seq) };
            InstanceResult {
                id: g.id.clone(),
                category: g.category,
                nested: g.nested,
                format_ok,
                format_error,
                counts,
                errors: classify_errors(&pred_seq, &gold_seq, candidates.get(&g.id).map(Vec::as_slice)),
            }
        })
        .collect();

    let mut splits = BTreeMap::new();
    let block = |filter: &dyn Fn(&InstanceResult) -> bool| {
        let mut counts = MatchCounts::default();
        let (mut n, mut ok) = (0, 0);
        for r in per_instance.iter().filter(|r| filter(r)) {
            n += 1;
            ok += r.format_ok as usize;
            counts.add(&r.counts);
        }
        MetricBlock::from_counts(n, ok, counts)
    };
    splits.insert("overall".to_string(), block(&|_| true));
    splits.insert("single".to_string(), block(&|r| r.category == Category::Single));
    splits.insert("multiple".to_string(), block(&|r| r.category == Category::Multiple));
    splits.insert("nested".to_string(), block(&|r| r.nested));

    let mut error_breakdown: BTreeMap<String, usize> = ERROR_CATEGORIES.iter().map(|c| (c.to_string(), 0)).collect();
    for r in &per_instance {
        for (k, v) in &r.errors {
            *error_breakdown.entry(k.clone()).or_insert(0) += v;
        }
    }

    let o = splits["overall"].clone();
    let mut meta = BTreeMap::new();
    meta.insert("strict_format".to_string(), Value::Bool(opts.strict_format));
    Ok(EvalReport {
        format_acc: o.format_acc,
        tool_p: o.tool_p,
        tool_r: o.tool_r,
        tool_f1: o.tool_f1,
        param_p: o.param_p,
        param_r: o.param_r,
        param_f1: o.param_f1,
        splits,
        error_breakdown,
        per_instance,
        meta,
    })
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

/// Summary table in percent, one row per split, followed by the error
/// counts.
pub fn render_markdown(report: &EvalReport) -> String {
    let mut out = String::from("# Evaluation report\n\n");
    out.push_str("| Split | Instances | Format ACC | Tool P | Tool R | Tool F1 | Parameter P | Parameter R | Parameter F1 |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|---:|---:|---:|\n");
    for name in ["overall", "single", "multiple", "nested"] {
        let Some(b) = report.splits.get(name) else { continue };
        out.push_str(&format!(
            "| {name} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            b.instances,
            pct(b.format_acc),
            pct(b.tool_p),
            pct(b.tool_r),
            pct(b.tool_f1),
            pct(b.param_p),
            pct(b.param_r),
            pct(b.param_f1)
        ));
    }
    out.push_str("\n| Error | Count |\n|---|---:|\n");
    for (k, v) in &report.error_breakdown {
        out.push_str(&format!("| {k} | {v} |\n"));
    }
    if !report.meta.is_empty() {
        out.push_str("\n| Setting | Value |\n|---|---|\n");
        for (k, v) in &report.meta {
            let shown = match v {
                Value::String(s) => s.replace('\n', " ").replace('|', "\\|"),
                other => other.to_string(),
            };
            out.push_str(&format!("| {k} | {shown} |\n"));
        }
    }
    out
}
