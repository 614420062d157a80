use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn failscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_failscope")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, category: &str, seed: &str) -> std::path::PathBuf {
    let path = dir.join(format!("{category}-{seed}.jsonl"));
    let o = failscope(&["synth", "--category", category, "--seed", seed, "--out", p(&path)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    path
}

#[test]
fn synth_is_seeded() {
    let a = failscope(&["synth", "--category", "retry_no_progress", "--seed", "7"]);
    let b = failscope(&["synth", "--category", "retry-no-progress", "--seed", "7"]);
    let c = failscope(&["synth", "--category", "retry_no_progress", "--seed", "8"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn unknown_category_is_rejected() {
    let o = failscope(&["synth", "--category", "gremlins"]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown category 'gremlins'"));
}

#[test]
fn deterministic_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let trace = synth(dir.path(), "state_workflow", "3");
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        let o = failscope(&["diagnose", "--trace", p(&trace), "--out", p(out), "--deterministic"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(!fs::read_to_string(&a).unwrap().contains("\"generated_at_ms\": 1"));

    let o = failscope(&["diagnose", "--trace", p(&trace)]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["run"]["generated_at_ms"].as_u64().is_some());
}

#[test]
fn empty_trace_is_a_parse_failure() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = failscope(&["diagnose", "--trace", p(&empty)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("wire"));

    let garbled = dir.path().join("garbled.jsonl");
    fs::write(&garbled, "{\"span_id\":\n").unwrap();
    assert_eq!(code(&failscope(&["diagnose", "--trace", p(&garbled)])), 2);
    assert_eq!(code(&failscope(&["diagnose", "--trace", p(&dir.path().join("absent.jsonl"))])), 2);
}

#[test]
fn out_of_order_trace_under_strict_config_is_a_pipeline_failure() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    fs::write(
        &trace,
        "{\"span_id\":\"b\",\"step\":2,\"ts_ms\":9,\"event\":\"model_response\",\"status\":\"ok\"}\n\
         {\"span_id\":\"a\",\"step\":1,\"ts_ms\":1,\"event\":\"model_response\",\"status\":\"ok\"}\n",
    )
    .unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"wire":{"strict_order":true}}"#).unwrap();
    let o = failscope(&["diagnose", "--trace", p(&trace), "--config", p(&cfg)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bundle"));
    assert_eq!(code(&failscope(&["diagnose", "--trace", p(&trace)])), 0);
}

#[test]
fn bad_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let trace = synth(dir.path(), "patch_submission", "1");
    let cfg = dir.path().join("c.json");
    for body in [r#"{"gate":{"budget_tokens":10}}"#, "{not json", r#"{"localize":{"z_thresh":"high"}}"#] {
        fs::write(&cfg, body).unwrap();
        let o = failscope(&["diagnose", "--trace", p(&trace), "--config", p(&cfg)]);
        assert_eq!(code(&o), 4, "{body}");
    }
    assert_eq!(code(&failscope(&["config", "--check", p(&cfg)])), 4);
    let defaults = failscope(&["config"]);
    assert_eq!(code(&defaults), 0);
    let v: serde_json::Value = serde_json::from_slice(&defaults.stdout).unwrap();
    assert_eq!(v["gate"]["budget_tokens"], 1200);
}

#[test]
fn hint_rerenders_stored_guidance() {
    let dir = tempfile::tempdir().unwrap();
    let trace = synth(dir.path(), "tool_subprocess", "2");
    let report = dir.path().join("r.json");
    assert_eq!(code(&failscope(&["diagnose", "--trace", p(&trace), "--out", p(&report)])), 0);
    let stored: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(stored["hint"]["token_estimate"].as_u64().unwrap() > 150);

    let full = failscope(&["hint", "--report", p(&report), "--budget", "1200"]);
    assert_eq!(code(&full), 0);
    let text = String::from_utf8(full.stdout).unwrap();
    for label in ["TARGET: ", "OPERATION: ", "VERIFY: ", "BOUNDARY: "] {
        assert_eq!(text.lines().filter(|l| l.starts_with(label)).count(), 1, "{label}\n{text}");
    }
    assert!(text.contains("EVIDENCE: "));

    let short = failscope(&["hint", "--report", p(&report), "--budget", "150"]);
    let text = String::from_utf8(short.stdout).unwrap();
    assert!(!text.contains("EVIDENCE: "), "{text}");
    for label in ["TARGET: ", "OPERATION: ", "VERIFY: ", "BOUNDARY: "] {
        assert!(text.contains(label), "{label}\n{text}");
    }
    assert!(text.chars().count() <= 600);

    assert_eq!(code(&failscope(&["hint", "--report", p(&report), "--budget", "50"])), 4);
}

#[test]
fn blocked_guidance_prints_conservative_hints_only() {
    let dir = tempfile::tempdir().unwrap();
    let trace = synth(dir.path(), "runtime_environment", "2");
    let report = dir.path().join("r.json");
    assert_eq!(code(&failscope(&["diagnose", "--trace", p(&trace), "--out", p(&report)])), 0);
    let o = failscope(&["hint", "--report", p(&report)]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("RECOVERY HINT (conservative: "), "{text}");
    assert!(!text.contains("TARGET:"));
    assert_eq!(text.lines().filter(|l| l.starts_with("- ")).count(), 3);
}

#[test]
fn invalid_reports_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"schema_version\":1}").unwrap();
    assert_eq!(code(&failscope(&["hint", "--report", p(&bad)])), 2);
    assert_eq!(code(&failscope(&["report", "--report", p(&bad)])), 2);

    let trace = synth(dir.path(), "state_workflow", "4");
    let good = dir.path().join("good.json");
    assert_eq!(code(&failscope(&["diagnose", "--trace", p(&trace), "--out", p(&good)])), 0);
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&good).unwrap()).unwrap();
    v["diagnosis"]["primary_cause"]["record_ids"] = serde_json::json!(["rec-nowhere"]);
    let tampered = dir.path().join("tampered.json");
    fs::write(&tampered, v.to_string()).unwrap();
    let o = failscope(&["report", "--report", p(&tampered)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("rec-nowhere"));
}

#[test]
fn report_summary_is_a_digest() {
    let dir = tempfile::tempdir().unwrap();
    let trace = synth(dir.path(), "insufficient_validation", "1");
    let report = dir.path().join("r.json");
    assert_eq!(code(&failscope(&["diagnose", "--trace", p(&trace), "--out", p(&report)])), 0);
    let o = failscope(&["report", "--report", p(&report), "--summary"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("run synth-insufficient_validation-1 "), "{text}");
    assert!(text.contains("cause: ") && text.contains("guidance: "));
}

#[test]
fn several_traces_with_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let traces: Vec<_> = ["retry_no_progress", "state_workflow", "tool_subprocess", "patch_submission"]
        .iter()
        .map(|c| synth(dir.path(), c, "5"))
        .collect();
    let out = dir.path().join("reports");
    let mut args = vec!["diagnose", "--jobs", "3", "--deterministic", "--out", p(&out)];
    for t in &traces {
        args.extend(["--trace", p(t)]);
    }
    let o = failscope(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for t in &traces {
        let stem = t.file_stem().unwrap().to_str().unwrap();
        let report = out.join(format!("{stem}.report.json"));
        let sequential = dir.path().join(format!("{stem}.single.json"));
        assert_eq!(
            code(&failscope(&["diagnose", "--trace", p(t), "--out", p(&sequential), "--deterministic"])),
            0
        );
        assert_eq!(fs::read(&report).unwrap(), fs::read(&sequential).unwrap(), "{stem}");
    }
}

#[test]
fn one_bad_trace_does_not_stop_the_others() {
    let dir = tempfile::tempdir().unwrap();
    let good = synth(dir.path(), "retry_no_progress", "1");
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "\n").unwrap();
    let out = dir.path().join("out");
    let o = failscope(&["diagnose", "--trace", p(&empty), "--trace", p(&good), "--out", p(&out), "--jobs", "2"]);
    assert_eq!(code(&o), 2);
    assert!(out.join("retry_no_progress-1.report.json").exists());
}

#[test]
fn documented_example_trace_is_valid_and_injectable() {
    let doc = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/wire-format.md")).unwrap();
    let block = doc.split("```json\n").nth(1).unwrap().split("```").next().unwrap();
    let read = failscope::wire::read_trace(block, &Default::default()).unwrap();
    assert!(failscope::wire::validate_trace(&read.spans).is_empty());
    assert_eq!(failscope::wire::write_trace(&read.spans), block);

    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("example.jsonl");
    fs::write(&trace, block).unwrap();
    let report = dir.path().join("example.json");
    let o = failscope(&["diagnose", "--trace", p(&trace), "--out", p(&report), "--deterministic"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("guidance injectable"));
    let o = failscope(&["hint", "--report", p(&report)]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("TARGET: artifact k8s/user-service.yaml"), "{text}");
}
