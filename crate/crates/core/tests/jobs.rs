mod common;

use std::path::Path;

use common::*;
use serde_json::Value;
use toolforge_core::backend::testing::MockServer;
use toolforge_core::backend::ScriptedBackend;
use toolforge_core::config::{BackendKind, JobConfig};
use toolforge_core::dataset::{load_candidates, load_instances, save_predictions};
use toolforge_core::evaluation::Prediction;
use toolforge_core::jobs::{
    run_configured_inference, run_evaluation_job, run_generation_job, run_index_job, run_inference_job, run_qc_job,
    run_retrieve, Stage,
};
use toolforge_core::retrieval::ToolIndex;
use toolforge_core::schema::ToolPool;

fn gold_predictions(cfg: &JobConfig) -> Vec<Prediction> {
    load_instances(&cfg.paths.instances())
        .unwrap()
        .iter()
        .map(|g| Prediction { id: g.id.clone(), raw_output: g.calling.to_value().to_string() })
        .collect()
}

#[test]
fn gold_predictions_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = run_golden_pipeline(dir.path());
    save_predictions(&cfg.paths.predictions(), &gold_predictions(&cfg)).unwrap();
    let report = run_evaluation_job(&cfg).unwrap();
    for v in [report.format_acc, report.tool_p, report.tool_r, report.tool_f1, report.param_p, report.param_r, report.param_f1] {
        assert_eq!(v, 1.0);
    }
    assert_eq!(report.splits["nested"].instances, 1);
    assert_eq!(report.splits["single"].instances, 2);
    let written: Value = serde_json::from_slice(&std::fs::read(cfg.paths.report_dir().join("report.json")).unwrap()).unwrap();
    assert_eq!(written["tool_f1"], 1.0);
    let md = std::fs::read_to_string(cfg.paths.report_dir().join("report.md")).unwrap();
    assert!(md.contains("100.00"));
}

#[test]
fn unknown_prediction_id() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = run_golden_pipeline(dir.path());
    let mut preds = gold_predictions(&cfg);
    preds[0].id = "nobody".into();
    save_predictions(&cfg.paths.predictions(), &preds).unwrap();
    assert_eq!(run_evaluation_job(&cfg).unwrap_err().code(), "ID_MISMATCH");
}

#[test]
fn qc_index_and_retrieve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = run_golden_pipeline(dir.path());
    let qc = run_qc_job(&cfg).unwrap();
    assert_eq!((qc.checked, qc.passed), (3, 3));
    let index = run_index_job(&cfg).unwrap();
    assert_eq!(index.len(), 6);
    let top = run_retrieve(&cfg, "book a taxi to the airport", Some(2)).unwrap();
    assert_eq!(top.len(), 2);
    assert!(top.iter().any(|(n, _)| n == "callTaxi"), "{top:?}");
}

#[test]
fn scripted_inference_then_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = run_golden_pipeline(dir.path());
    cfg.retriever.k = 2;
    cfg.evaluation.add_gold_candidates = true;
    let pool = ToolPool::load_jsonl(&cfg.paths.tools(), &Default::default()).unwrap();
    let index = ToolIndex::build(&pool, Default::default(), 1.2, 0.75).unwrap();
    let answers: Vec<String> = gold_predictions(&cfg)
        .into_iter()
        .map(|p| format!("Sure, here you go:\n{}", p.raw_output))
        .collect();
    let backend = ScriptedBackend::sequence(answers).unwrap();
    let summary = run_inference_job(&cfg, &backend, &index, &pool).unwrap();
    assert_eq!(summary.instances, 3);
    let candidates = load_candidates(&cfg.paths.candidates()).unwrap();
    for inst in load_instances(&cfg.paths.instances()).unwrap() {
        let c = &candidates[&inst.id];
        assert!(c.len() >= 2);
        assert!(inst.calling.tool_names().all(|t| c.iter().any(|n| n == t)));
    }
    let report = run_evaluation_job(&cfg).unwrap();
    assert_eq!(report.tool_f1, 1.0);
    assert_eq!(report.meta["k"], 2);
    assert!(report.meta["inference_prompt"].as_str().unwrap().contains("tools = {}"));
}

fn files_under(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files_under(&p, out);
        } else {
            out.push(p);
        }
    }
}

/// The key reaches the endpoint and nothing else: no output, manifest,
/// audit line or report contains it.
#[test]
fn api_key_never_written() {
    const VAR: &str = "TOOLFORGE_TEST_SENTINEL_KEY";
    const KEY: &str = "sk-sentinel-7f3a9c-never-persist";
    std::env::set_var(VAR, KEY);
    let dir = tempfile::tempdir().unwrap();
    let golden = tempfile::tempdir().unwrap();
    let gold_cfg = run_golden_pipeline(golden.path());
    let answers = gold_predictions(&gold_cfg);

    let server = MockServer::start_with(move |_, req| {
        let body = if req.body.contains("field list") {
            r#"["Food", "Travel"]"#.to_string()
        } else if req.body.contains("subfield list") {
            r#"["Restaurants"]"#.to_string()
        } else {
            answers[0].raw_output.clone()
        };
        (200, MockServer::chat_body(&body))
    });
    let mut cfg = gold_cfg.clone();
    cfg.paths.out_dir = dir.path().to_path_buf();
    cfg.backend.kind = BackendKind::Http;
    cfg.backend.script = None;
    cfg.backend.config.endpoint_url = server.url.clone();
    cfg.backend.config.api_key_env = VAR.into();
    cfg.backend.config.max_retries = 0;
    run_generation_job(&cfg, Stage::Fields).unwrap();
    for name in ["tools.jsonl", "instances.jsonl"] {
        std::fs::copy(golden.path().join(name), dir.path().join(name)).unwrap();
    }
    run_configured_inference(&cfg).unwrap();
    run_evaluation_job(&cfg).unwrap();

    let requests = server.requests();
    assert!(!requests.is_empty());
    assert!(requests.iter().all(|r| r.header("authorization").as_deref() == Some(&format!("Bearer {KEY}")[..])));
    let mut files = Vec::new();
    files_under(dir.path(), &mut files);
    assert!(files.len() >= 6, "{files:?}");
    for f in files {
        let text = String::from_utf8_lossy(&std::fs::read(&f).unwrap()).into_owned();
        assert!(!text.contains(KEY), "{} holds the key", f.display());
    }
    let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains(VAR), "the manifest records which variable holds the key");
}
