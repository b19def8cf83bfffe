mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::*;
use toolforge_core::config::JobConfig;
use toolforge_core::dataset::load_instances;
use toolforge_core::generation::{qc_instance, RunManifest};
use toolforge_core::jobs::{run_generation_job, Stage};
use toolforge_core::schema::ToolPool;

const OUTPUTS: [&str; 3] = ["fields.json", "tools.jsonl", "instances.jsonl"];

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn golden_run_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_golden_pipeline(a.path());
    run_golden_pipeline(b.path());
    let expected = fixture_dir().join("expected");
    for name in OUTPUTS {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs between runs");
        assert_eq!(read(a.path(), name), read(&expected, name), "{name} differs from the golden copy");
    }
    // timestamps aside, manifests agree too
    let ma = RunManifest::load_or_default(&a.path().join("manifest.json")).unwrap();
    let mb = RunManifest::load_or_default(&b.path().join("manifest.json")).unwrap();
    assert_eq!(ma.stages, mb.stages);
}

/// Counters from walking the fixture scripts by hand:
/// fields: 1 list call (Food, Travel) + 1 subfield call each → 3 subfields;
/// tools: per subfield one round with new tools and one that only repeats
/// (stall limit 1) → 6 calls, 9 items, 3 duplicates, 6 tools;
/// backfill: party_size asked once, contact_phone filled by rule;
/// single: 2 calls, 2 instances; multi: combine + fill, 1 instance.
#[test]
fn manifest_counters_match_hand_walk() {
    let dir = tempfile::tempdir().unwrap();
    run_golden_pipeline(dir.path());
    let m = RunManifest::load_or_default(&dir.path().join("manifest.json")).unwrap();
    let totals: BTreeMap<&str, (usize, usize, usize, usize, usize)> = m
        .stages
        .iter()
        .map(|(k, s)| {
            let t = &s.totals;
            (k.as_str(), (t.calls, t.attempted, t.parsed, t.deduped, t.accepted))
        })
        .collect();
    assert_eq!(totals["fields"], (3, 5, 5, 0, 5));
    assert_eq!(totals["tools"], (6, 9, 9, 3, 6));
    assert_eq!(totals["backfill"], (1, 2, 2, 0, 2));
    assert_eq!(totals["single"], (2, 2, 2, 0, 2));
    assert_eq!(totals["multi"], (2, 1, 1, 0, 1));
    assert!(m.stages.values().all(|s| s.is_consistent() && s.rejections.is_empty()));
    let stalls: Vec<(&str, usize, &str)> = m.stages["tools"]
        .stalls
        .iter()
        .map(|s| (s.subfield.as_str(), s.rounds, s.stopped_by.as_str()))
        .collect();
    assert_eq!(
        stalls,
        [("Restaurants", 2, "stalled"), ("Traffic Monitoring", 2, "stalled"), ("Taxi Services", 2, "stalled")]
    );
}

#[test]
fn golden_instances_pass_qc() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = run_golden_pipeline(dir.path());
    let pool = ToolPool::load_jsonl(&cfg.paths.tools(), &Default::default()).unwrap();
    let instances = load_instances(&cfg.paths.instances()).unwrap();
    assert_eq!(pool.len(), 6);
    assert_eq!(instances.len(), 3);
    for inst in &instances {
        let report = qc_instance(inst, &pool);
        assert!(report.ok, "{}: {:?}", inst.id, report.codes());
    }
    let nested: Vec<_> = instances.iter().filter(|i| i.nested).collect();
    assert_eq!(nested.len(), 1);
    assert_eq!(nested[0].calling.to_value()[1]["parameters"]["location"], "API_call_0");
    // only the declared outputs and the audit log are left behind
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["completions.jsonl", "fields.json", "instances.jsonl", "manifest.json", "tools.jsonl"]);
}

#[test]
fn rerunning_a_stage_replaces_its_instances() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = run_golden_pipeline(dir.path());
    let before = read(dir.path(), "instances.jsonl");
    cfg.backend.script = Some(fixture_dir().join("single_script.json"));
    run_generation_job(&cfg, Stage::Single).unwrap();
    assert_eq!(read(dir.path(), "instances.jsonl"), before);
}

fn fixture_config(out: &Path) -> JobConfig {
    let mut cfg = JobConfig::load(&fixture_dir().join("job.toml")).unwrap();
    cfg.paths.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn missing_prerequisites() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    for stage in [Stage::Tools, Stage::Single, Stage::Multi] {
        let err = run_generation_job(&cfg, stage).unwrap_err();
        assert_eq!(err.code(), "MISSING_PREREQ", "{}", stage.as_str());
    }
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn sampling_stages_need_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = run_golden_pipeline(dir.path());
    cfg.generation.rng_seed = None;
    cfg.backend.script = Some(fixture_dir().join("single_script.json"));
    assert_eq!(run_generation_job(&cfg, Stage::Single).unwrap_err().code(), "CONFIG_ERROR");
}

#[test]
fn a_failed_stage_keeps_previous_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = run_golden_pipeline(dir.path());
    let before = read(dir.path(), "tools.jsonl");
    // the fields script answers nothing the tool prompt can use, then runs out
    cfg.backend.script = Some(fixture_dir().join("fields_script.json"));
    let err = run_generation_job(&cfg, Stage::Tools).unwrap_err();
    assert_eq!(err.code(), "SCRIPT_EXHAUSTED");
    assert_eq!(read(dir.path(), "tools.jsonl"), before);
}
