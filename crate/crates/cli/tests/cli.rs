//! End-to-end runs of the `toolforge` binary over the scripted fixture.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/pipeline")
}

fn toolforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toolforge"))
        .current_dir(dir)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stderr_code(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().last().unwrap_or_default();
    let v: Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr not JSON: {err}"));
    v["error"].as_str().unwrap().to_string()
}

/// Copies the fixture into `dir` and returns the job file path.
fn setup(dir: &Path) -> String {
    for entry in std::fs::read_dir(fixture()).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            std::fs::copy(entry.path(), dir.join(entry.file_name())).unwrap();
        }
    }
    "job.toml".into()
}

fn gen(dir: &Path, stage: &str) -> Output {
    let script = format!("{stage}_script.json");
    toolforge(dir, &["-c", "job.toml", "--script", &script, "gen", stage])
}

fn full_pipeline(dir: &Path) {
    setup(dir);
    for stage in ["fields", "tools", "single", "multi"] {
        let out = gen(dir, stage);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
        let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(summary["stage"], stage);
    }
}

#[test]
fn pipeline_matches_golden_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    full_pipeline(tmp.path());
    for name in ["fields.json", "tools.jsonl", "instances.jsonl"] {
        let got = std::fs::read(tmp.path().join("out").join(name)).unwrap();
        let want = std::fs::read(fixture().join("expected").join(name)).unwrap();
        assert!(got == want, "{name} differs from the golden copy");
    }
    let out = toolforge(tmp.path(), &["-c", "job.toml", "qc"]);
    assert!(out.status.success());
    let qc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(qc["checked"], 3);
    assert_eq!(qc["passed"], 3);
}

#[test]
fn stats_and_retrieval() {
    let tmp = tempfile::tempdir().unwrap();
    full_pipeline(tmp.path());
    let out = toolforge(tmp.path(), &["-c", "job.toml", "stats", "--json"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["tool_count"], 6);
    assert_eq!(v["instances"]["total"], 3);
    assert_eq!(v["instances"]["nested"], 1);

    let out = toolforge(tmp.path(), &["-c", "job.toml", "stats"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("zero-required tools: 0.00%"));

    let out = toolforge(tmp.path(), &["-c", "job.toml", "index"]);
    assert!(out.status.success());
    assert!(tmp.path().join("out/index.json").exists());
    let out = toolforge(tmp.path(), &["-c", "job.toml", "retrieve", "book a taxi to the airport", "-k", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains("callTaxi"), "{text}");
}

#[test]
fn eval_of_gold_predictions_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    full_pipeline(tmp.path());
    let gold = std::fs::read_to_string(tmp.path().join("out/instances.jsonl")).unwrap();
    let preds: String = gold
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            serde_json::json!({"id": v["id"], "output": v["calling"].to_string()}).to_string() + "\n"
        })
        .collect();
    std::fs::write(tmp.path().join("preds.jsonl"), &preds).unwrap();
    let out = toolforge(tmp.path(), &["-c", "job.toml", "eval", "--predictions", "preds.jsonl", "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["format_acc"], 1.0);
    assert!(tmp.path().join("out/report/report.md").exists());

    // a missing prediction is a format failure
    let short: String = preds.lines().skip(1).map(|l| format!("{l}\n")).collect();
    std::fs::write(tmp.path().join("short.jsonl"), &short).unwrap();
    let out = toolforge(tmp.path(), &["-c", "job.toml", "eval", "--predictions", "short.jsonl", "--json"]);
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((report["format_acc"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);

    // an unknown id is not
    let stray = short + "{\"id\": \"nobody\", \"output\": \"[]\"}\n";
    std::fs::write(tmp.path().join("stray.jsonl"), stray).unwrap();
    let out = toolforge(tmp.path(), &["-c", "job.toml", "eval", "--predictions", "stray.jsonl"]);
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(stderr_code(&out), "ID_MISMATCH");
}

#[test]
fn missing_prerequisite_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    let out = gen(tmp.path(), "tools");
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_code(&out), "MISSING_PREREQ");
    assert!(!tmp.path().join("out/tools.jsonl").exists());
}

#[test]
fn bad_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "[retriever]\nk = 0\n").unwrap();
    let out = toolforge(tmp.path(), &["-c", "bad.toml", "index"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_code(&out), "CONFIG_ERROR");

    std::fs::write(tmp.path().join("typo.toml"), "[generaton]\nstall_limit = 2\n").unwrap();
    let out = toolforge(tmp.path(), &["-c", "typo.toml", "index"]);
    assert_eq!(out.status.code(), Some(2));

    let out = toolforge(tmp.path(), &["gen", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_code(&out), "USAGE_ERROR");
}

#[test]
fn unreachable_backend_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("http.toml"),
        "[backend]\nendpoint_url = \"http://127.0.0.1:9/v1/chat/completions\"\nmodel_name = \"m\"\nmax_retries = 0\nrequest_timeout_secs = 2\n\n[generation]\nrng_seed = 1\n",
    )
    .unwrap();
    let out = toolforge(tmp.path(), &["-c", "http.toml", "gen", "fields"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_exits_0() {
    let tmp = tempfile::tempdir().unwrap();
    let out = toolforge(tmp.path(), &["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("eval"));
}
