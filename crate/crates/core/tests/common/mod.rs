//! Oracles and generators shared by the integration tests. Nothing here
//! calls into the scoring or ranking code it is used to check.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::{json, Value};
use toolforge_core::config::JobConfig;
use toolforge_core::jobs::{run_generation_job, Stage};
use toolforge_core::schema::{ToolPool, ToolSpec};

// ---- golden pipeline ----

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pipeline")
}

/// Runs fields → tools → single → multi with the fixture scripts, writing
/// into `out`.
pub fn run_golden_pipeline(out: &Path) -> JobConfig {
    let dir = fixture_dir();
    let mut cfg = JobConfig::load(&dir.join("job.toml")).expect("fixture config");
    cfg.paths.out_dir = out.to_path_buf();
    for (stage, script) in [
        (Stage::Fields, "fields_script.json"),
        (Stage::Tools, "tools_script.json"),
        (Stage::Single, "single_script.json"),
        (Stage::Multi, "multi_script.json"),
    ] {
        cfg.backend.script = Some(dir.join(script));
        run_generation_job(&cfg, stage).unwrap_or_else(|e| panic!("stage {}: {e}", stage.as_str()));
    }
    cfg
}

// ---- synthetic pool ----

pub const PARAMS: [&str; 4] = ["p0", "p1", "p2", "p3"];

/// Response count of synthetic tool `i`.
pub fn response_count(i: usize) -> usize {
    i % 3 + 1
}

pub fn synthetic_tool(i: usize, description: &str) -> Value {
    let params: serde_json::Map<String, Value> = PARAMS
        .iter()
        .map(|p| (p.to_string(), json!({"type": "str", "description": format!("{p} of tool{i}")})))
        .collect();
    let responses: serde_json::Map<String, Value> = (0..response_count(i))
        .map(|r| (format!("r{r}"), json!({"type": "str", "description": "out"})))
        .collect();
    json!({
        "api_name": format!("tool{i}"),
        "api_description": description,
        "field": "Synthetic/Tools",
        "parameters": params,
        "required": if i % 2 == 0 { json!(["p0"]) } else { json!(["p0", "p1"]) },
        "responses": responses,
    })
}

pub fn synthetic_pool(n: usize) -> ToolPool {
    let mut pool = ToolPool::new();
    for i in 0..n {
        pool.insert_tool(ToolSpec::from_value(&synthetic_tool(i, &format!("synthetic tool {i}")), &Default::default()).unwrap());
    }
    pool
}

// ---- metric oracle ----

/// Parameter values with a hand-assigned equivalence class. Two values
/// match exactly when their labels are equal.
pub fn vocab() -> Vec<(Value, &'static str)> {
    vec![
        (json!("Paris"), "s:Paris"),
        (json!(" Paris "), "s:Paris"),
        (json!("paris"), "s:paris"),
        (json!("Nanjing Road"), "s:Nanjing Road"),
        (json!("3 apples"), "s:3 apples"),
        (json!("3-4"), "s:3-4"),
        (json!(3), "n:3"),
        (json!(3.0), "n:3"),
        (json!("3"), "n:3"),
        (json!("3.0"), "n:3"),
        (json!("+3"), "n:3"),
        (json!(4.5), "n:4.5"),
        (json!("4.5"), "n:4.5"),
        (json!(0), "n:0"),
        (json!(-0.0), "n:0"),
        (json!("0"), "n:0"),
        (json!(1000), "n:1000"),
        (json!("1e3"), "n:1000"),
        (json!(true), "b:t"),
        (json!("True"), "b:t"),
        (json!("TRUE"), "b:t"),
        (json!(false), "b:f"),
        (json!("false"), "b:f"),
    ]
}

fn label_of(v: &Value) -> String {
    if let Some(k) = v.as_str().and_then(|s| s.strip_prefix("API_call_")) {
        return format!("r:{k}");
    }
    vocab()
        .into_iter()
        .find(|(x, _)| x == v && x.to_string() == v.to_string())
        .map(|(_, l)| l.to_string())
        .unwrap_or_else(|| panic!("value outside the oracle vocabulary: {v}"))
}

/// Greedy one-to-one pairing of equal items. For an equivalence relation
/// this is a maximum matching.
fn pair_count<T: PartialEq>(pred: &[T], gold: &[T]) -> usize {
    let mut used = vec![false; pred.len()];
    let mut n = 0;
    for g in gold {
        if let Some(j) = (0..pred.len()).find(|&j| !used[j] && pred[j] == *g) {
            used[j] = true;
            n += 1;
        }
    }
    n
}

/// (correct, predicted, gold) for tools, then for parameters.
pub fn brute_counts(pred: &Value, gold: &Value) -> [usize; 6] {
    let tools = |s: &Value| -> Vec<String> {
        s.as_array().unwrap().iter().map(|c| c["api"].as_str().unwrap().to_string()).collect()
    };
    let triples = |s: &Value| -> Vec<(String, String, String)> {
        let mut out = Vec::new();
        for c in s.as_array().unwrap() {
            for (k, v) in c["parameters"].as_object().unwrap() {
                out.push((c["api"].as_str().unwrap().to_string(), k.clone(), label_of(v)));
            }
        }
        out
    };
    let (pt, gt, pp, gp) = (tools(pred), tools(gold), triples(pred), triples(gold));
    [pair_count(&pt, &gt), pt.len(), gt.len(), pair_count(&pp, &gp), pp.len(), gp.len()]
}

fn random_value(rng: &mut impl Rng, declared: usize) -> Value {
    if declared > 0 && rng.random_bool(0.2) {
        json!(format!("API_call_{}", rng.random_range(0..declared)))
    } else {
        vocab().choose(rng).unwrap().0.clone()
    }
}

fn random_call(rng: &mut impl Rng, pool_size: usize, declared: &mut usize) -> Value {
    let i = rng.random_range(0..pool_size);
    let mut params = serde_json::Map::new();
    for p in PARAMS {
        if p == "p0" || rng.random_bool(0.4) {
            params.insert(p.into(), random_value(rng, *declared));
        }
    }
    let responses: Vec<String> = (0..response_count(i)).map(|r| format!("API_call_{}", *declared + r)).collect();
    *declared += response_count(i);
    json!({"api": format!("tool{i}"), "parameters": params, "responses": responses})
}

/// A canonical calling list over the synthetic pool: consecutive response
/// labels, references only to earlier calls.
pub fn random_calling(rng: &mut impl Rng, pool_size: usize, max_calls: usize) -> Value {
    let mut declared = 0;
    let n = rng.random_range(1..=max_calls);
    Value::Array((0..n).map(|_| random_call(rng, pool_size, &mut declared)).collect())
}

/// What a generated prediction is: scoreable JSON, or known to fail the
/// format check.
pub enum PredKind {
    Valid(Value),
    Invalid,
}

/// A raw model output for `gold`, with its expected reading.
pub fn random_prediction(rng: &mut impl Rng, gold: &Value, pool_size: usize) -> (String, PredKind) {
    match rng.random_range(0..12) {
        0 => ("I could not find a suitable tool.".into(), PredKind::Invalid),
        1 => {
            let first = gold[0].clone();
            (first.to_string(), PredKind::Invalid)
        }
        2 => {
            // the first call points at a label nobody declares
            let mut bad = gold.clone();
            bad[0]["parameters"]["p0"] = json!("API_call_99");
            (bad.to_string(), PredKind::Invalid)
        }
        3 => (gold.to_string(), PredKind::Valid(gold.clone())),
        4 => ("[]".into(), PredKind::Valid(json!([]))),
        _ => {
            let mut calls: Vec<Value> = gold.as_array().unwrap().clone();
            // later calls may point at the last one, so only it can go
            if calls.len() > 1 && rng.random_bool(0.3) {
                calls.pop();
            }
            let mut declared: usize = calls.iter().map(|c| c["responses"].as_array().unwrap().len()).sum();
            for c in calls.iter_mut() {
                let mut changed = serde_json::Map::new();
                let refs_ok = c["responses"][0].as_str().unwrap().trim_start_matches("API_call_").parse::<usize>().unwrap();
                for (k, v) in c["parameters"].as_object().unwrap() {
                    match rng.random_range(0..10) {
                        0 | 1 => {}
                        2 | 3 => {
                            changed.insert(k.clone(), random_value(rng, refs_ok));
                        }
                        _ => {
                            changed.insert(k.clone(), v.clone());
                        }
                    }
                }
                c["parameters"] = Value::Object(changed);
                if rng.random_bool(0.1) {
                    // a wrong tool with the same response count
                    let i: usize = c["api"].as_str().unwrap()[4..].parse().unwrap();
                    let j = (i + 3) % pool_size;
                    if response_count(j) == response_count(i) {
                        c["api"] = json!(format!("tool{j}"));
                    }
                }
            }
            for _ in 0..rng.random_range(0..3) {
                calls.push(random_call(rng, pool_size, &mut declared));
            }
            let value = Value::Array(calls);
            let text = if rng.random_bool(0.5) {
                format!("Here is the calling:\n{value}\nDone.")
            } else {
                value.to_string()
            };
            (text, PredKind::Valid(value))
        }
    }
}

pub fn oracle_ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn oracle_f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

// ---- BM25 oracle ----

pub fn random_text(rng: &mut impl Rng, vocab_size: usize, min: usize, max: usize) -> Vec<String> {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| format!("w{}", rng.random_range(0..vocab_size))).collect()
}

/// Okapi BM25 straight from the formula, scanning the corpus for every
/// term: idf = ln(1 + (N - df + 0.5) / (df + 0.5)).
pub fn bm25_direct(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<f64> {
    let n = docs.len() as f64;
    let avg = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    docs.iter()
        .map(|doc| {
            let mut score = 0.0;
            for q in query {
                let df = docs.iter().filter(|d| d.contains(q)).count() as f64;
                let tf = doc.iter().filter(|t| *t == q).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc.len() as f64 / avg));
            }
            score
        })
        .collect()
}

// ---- calling templates ----

/// A random blank template over the synthetic pool: required parameters
/// blank, some optional ones literal, blank or referencing an earlier call.
pub fn random_template(rng: &mut impl Rng, pool_size: usize, max_calls: usize) -> Value {
    let n = rng.random_range(1..=max_calls);
    let mut declared = 0usize;
    let mut calls = Vec::new();
    for _ in 0..n {
        let i = rng.random_range(0..pool_size);
        let mut params = serde_json::Map::new();
        params.insert("p0".into(), json!("___"));
        if i % 2 == 1 {
            params.insert("p1".into(), json!("___"));
        }
        for p in ["p2", "p3"] {
            match rng.random_range(0..4) {
                0 => {}
                1 => {
                    params.insert(p.into(), json!("___"));
                }
                2 if declared > 0 => {
                    params.insert(p.into(), json!(format!("API_call_{}", rng.random_range(0..declared))));
                }
                _ => {
                    params.insert(p.into(), json!("Paris"));
                }
            }
        }
        let responses: Vec<String> = (0..response_count(i)).map(|r| format!("API_call_{}", declared + r)).collect();
        declared += response_count(i);
        calls.push(json!({"api": format!("tool{i}"), "parameters": params, "responses": responses}));
    }
    Value::Array(calls)
}

// ---- checks shared by the topic tests and the acceptance run ----

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use toolforge_core::calling::{
    canonical_renumber, is_nested, parse_call_sequence, validate_sequence, CallSequence, ParamValue, SequenceMode,
};
use toolforge_core::evaluation::{evaluate_corpus, match_instance, parse_prediction, EvalOptions, EvalReport, Prediction};
use toolforge_core::generation::{Instance, Provenance};
use toolforge_core::retrieval::{recall_at_k, ToolDocument, ToolIndex};

pub fn instance(id: &str, query: &str, calling: &Value) -> Instance {
    Instance::new(id, query, parse_call_sequence(calling).unwrap(), Provenance::default())
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// `pairs` seeded (prediction, gold) pairs: per-instance counts against the
/// brute-force matcher and corpus figures against the formulas.
pub fn check_metric_oracle(pairs: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut golds = Vec::new();
    let mut preds = Vec::new();
    let mut totals = [0usize; 6];
    let mut format_ok = 0usize;
    for j in 0..pairs {
        let gold_json = random_calling(&mut rng, 10, 4);
        let (raw, kind) = random_prediction(&mut rng, &gold_json, 10);
        let id = format!("p{j}");
        let gold = instance(&id, "q", &gold_json);
        let expected = match &kind {
            PredKind::Valid(v) => brute_counts(v, &gold_json),
            PredKind::Invalid => {
                let g = brute_counts(&gold_json, &gold_json);
                [0, 0, g[2], 0, 0, g[5]]
            }
        };
        match (&kind, parse_prediction(&raw)) {
            (PredKind::Valid(_), Ok(seq)) => {
                format_ok += 1;
                let c = match_instance(&seq, &gold.calling);
                let got = [c.correct_tools, c.predicted_tools, c.gold_tools, c.correct_params, c.predicted_params, c.gold_params];
                if got != expected {
                    return Err(format!("pair {j}: counts {got:?}, oracle {expected:?}\npred {raw}\ngold {gold_json}"));
                }
            }
            (PredKind::Invalid, Err(_)) => {}
            (PredKind::Valid(_), Err(e)) => return Err(format!("pair {j}: valid output rejected: {e}\n{raw}")),
            (PredKind::Invalid, Ok(_)) => return Err(format!("pair {j}: invalid output accepted\n{raw}")),
        }
        for (t, e) in totals.iter_mut().zip(expected) {
            *t += e;
        }
        golds.push(gold);
        preds.push(Prediction { id, raw_output: raw });
    }
    let report = evaluate_corpus(&preds, &golds, &EvalOptions::default()).map_err(|e| e.to_string())?;
    let tp = oracle_ratio(totals[0], totals[1]);
    let tr = oracle_ratio(totals[0], totals[2]);
    let pp = oracle_ratio(totals[3], totals[4]);
    let pr = oracle_ratio(totals[3], totals[5]);
    let want = [
        ("format_acc", report.format_acc, format_ok as f64 / pairs as f64),
        ("tool_p", report.tool_p, tp),
        ("tool_r", report.tool_r, tr),
        ("tool_f1", report.tool_f1, oracle_f1(tp, tr)),
        ("param_p", report.param_p, pp),
        ("param_r", report.param_r, pr),
        ("param_f1", report.param_f1, oracle_f1(pp, pr)),
    ];
    for (name, got, exp) in want {
        if !close(got, exp, 1e-12) {
            return Err(format!("{name}: report {got}, oracle {exp}"));
        }
    }
    Ok(())
}

fn headline(r: &EvalReport) -> [f64; 7] {
    [r.format_acc, r.tool_p, r.tool_r, r.tool_f1, r.param_p, r.param_r, r.param_f1]
}

/// predictions == gold gives all ones; garbage gives all zeros.
pub fn check_identity_and_zero(n: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let golds: Vec<Instance> = (0..n)
        .map(|j| instance(&format!("g{j}"), "q", &random_calling(&mut rng, 10, 4)))
        .collect();
    let same: Vec<Prediction> = golds
        .iter()
        .map(|g| Prediction { id: g.id.clone(), raw_output: g.calling.to_value().to_string() })
        .collect();
    let r = evaluate_corpus(&same, &golds, &EvalOptions::default()).map_err(|e| e.to_string())?;
    if headline(&r) != [1.0; 7] {
        return Err(format!("identity corpus scored {:?}", headline(&r)));
    }
    let junk: Vec<Prediction> = golds
        .iter()
        .enumerate()
        .map(|(j, g)| Prediction {
            id: g.id.clone(),
            raw_output: ["", "no idea", "{\"api\": ", "[1, 2", "```\n```"][j % 5].to_string(),
        })
        .collect();
    let r = evaluate_corpus(&junk, &golds, &EvalOptions::default()).map_err(|e| e.to_string())?;
    if headline(&r) != [0.0; 7] {
        return Err(format!("garbage corpus scored {:?}", headline(&r)));
    }
    Ok(())
}

/// Index scores against the direct formula on a seeded corpus.
pub fn check_bm25_oracle(docs_n: usize, queries: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs: Vec<Vec<String>> = (0..docs_n).map(|_| random_text(&mut rng, 40, 3, 30)).collect();
    for (k1, b) in [(1.2, 0.75), (2.0, 0.3), (0.5, 1.0)] {
        let index = ToolIndex::from_documents(
            docs.iter().enumerate().map(|(i, d)| ToolDocument::new(format!("doc{i:02}"), d.join(" "))).collect(),
            k1,
            b,
        );
        for q in 0..queries {
            let mut query = random_text(&mut rng, 45, 1, 6);
            if q % 5 == 0 {
                // repeated terms count once per occurrence
                query.push(query[0].clone());
            }
            let want = bm25_direct(&docs, &query, k1, b);
            let got = index.scores(&query.join(" "));
            for (i, (g, w)) in got.iter().zip(&want).enumerate() {
                if !close(*g, *w, 1e-9) {
                    return Err(format!("k1={k1} b={b} query {query:?} doc {i}: index {g}, formula {w}"));
                }
            }
        }
    }
    Ok(())
}

/// recall@k over a seeded pool never drops as k grows and reaches 1 at |pool|.
pub fn check_recall_monotone(pool_n: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = ToolPool::new();
    for i in 0..pool_n {
        let desc = random_text(&mut rng, 60, 4, 12).join(" ");
        pool.insert_tool(ToolSpec::from_value(&synthetic_tool(i, &desc), &Default::default()).unwrap());
    }
    let instances: Vec<Instance> = (0..20)
        .map(|j| {
            let calling = random_calling(&mut rng, pool_n, 3);
            instance(&format!("r{j}"), &random_text(&mut rng, 60, 3, 10).join(" "), &calling)
        })
        .collect();
    let index = ToolIndex::build(&pool, Default::default(), 1.2, 0.75).map_err(|e| e.to_string())?;
    let mut last = 0.0;
    for k in 1..=pool_n {
        let r = recall_at_k(&index, &pool, &instances, k).map_err(|e| e.to_string())?;
        if r + 1e-15 < last {
            return Err(format!("recall@{k} = {r} < recall@{} = {last}", k - 1));
        }
        last = r;
    }
    if last != 1.0 {
        return Err(format!("recall@{pool_n} = {last}"));
    }
    Ok(())
}

/// Random templates validate; renumbering is idempotent, undoes any
/// relabeling, and keeps the nested flag; injected bad references fail.
pub fn check_calling_properties(templates: usize, seed: u64) -> Result<(), String> {
    let pool = synthetic_pool(10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..templates {
        let raw = random_template(&mut rng, 10, 6);
        let seq = parse_call_sequence(&raw).map_err(|e| format!("template {t}: {e}"))?;
        let report = validate_sequence(&seq, &pool, SequenceMode::Template);
        if !report.ok {
            return Err(format!("template {t} rejected: {:?}\n{raw}", report.codes()));
        }
        let once = canonical_renumber(&seq).map_err(|e| e.to_string())?;
        let twice = canonical_renumber(&once).map_err(|e| e.to_string())?;
        if once != twice || once != seq || is_nested(&once) != is_nested(&seq) {
            return Err(format!("template {t}: renumbering is not idempotent"));
        }
        let shifted = relabel(&seq, &mut rng);
        if canonical_renumber(&shifted).map_err(|e| e.to_string())? != seq {
            return Err(format!("template {t}: renumbering did not undo a relabeling"));
        }
        if let Some(bad) = inject_bad_ref(&seq, &mut rng) {
            let report = validate_sequence(&bad, &pool, SequenceMode::Template);
            let codes = report.codes();
            if report.ok || !codes.iter().any(|c| matches!(*c, "SELF_REFERENCE" | "FORWARD_REF_ONLY")) {
                return Err(format!("template {t}: injected reference accepted ({codes:?})"));
            }
        }
    }
    Ok(())
}

/// Maps labels through a random increasing injection with gaps.
fn relabel(seq: &CallSequence, rng: &mut impl Rng) -> CallSequence {
    let total: usize = seq.calls.iter().map(|c| c.responses.len()).sum();
    let mut map = Vec::with_capacity(total);
    let mut next = rng.random_range(0..5);
    for _ in 0..total {
        map.push(next);
        next += rng.random_range(1..4);
    }
    let mut out = seq.clone();
    for c in &mut out.calls {
        for r in &mut c.responses {
            *r = map[*r];
        }
        for v in c.parameters.values_mut() {
            if let ParamValue::Ref(k) = v {
                *k = map[*k];
            }
        }
    }
    out
}

/// Points some parameter of call `i` at a label declared by call `i` or later.
fn inject_bad_ref(seq: &CallSequence, rng: &mut impl Rng) -> Option<CallSequence> {
    let i = rng.random_range(0..seq.calls.len());
    let later: Vec<usize> = seq.calls[i..].iter().flat_map(|c| c.responses.iter().copied()).collect();
    let target = *later.choose(rng)?;
    let mut out = seq.clone();
    out.calls[i].parameters.insert("p3".into(), ParamValue::Ref(target));
    Some(out)
}
