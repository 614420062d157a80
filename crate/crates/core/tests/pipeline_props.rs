mod common;

use failscope::config::Config;
use failscope::gate::{format_hint, run_gate, token_estimate, GateError};
use failscope::synth::{synthesize, Category};
use failscope::{run_pipeline, Report};
use proptest::prelude::*;

fn report(category: Category, seed: u64) -> Report {
    run_pipeline(&synthesize(category, seed), "synthetic", &Config::default(), None).unwrap()
}

fn category() -> impl Strategy<Value = Category> {
    prop::sample::select(Category::ALL.to_vec())
}

/// Content of a hint line at a small budget is still present at a larger
/// one; an ellipsized field line only needs its kept prefix to survive.
fn line_survives(line: &str, larger: &str) -> bool {
    if larger.lines().any(|l| l == line) {
        return true;
    }
    match line.strip_suffix("...") {
        Some(prefix) => larger.lines().any(|l| l.starts_with(prefix)),
        None => false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gate_is_a_pure_function(c in category(), seed in 0u64..500) {
        let r = report(c, seed);
        let cfg = Config::default().gate;
        let a = serde_json::to_string(&run_gate(&r.diagnosis, &r.records, &cfg)).unwrap();
        let b = serde_json::to_string(&run_gate(&r.diagnosis, &r.records, &cfg)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a, serde_json::to_string(&r.gate).unwrap());
    }

    #[test]
    fn larger_budgets_never_remove_content(c in category(), seed in 0u64..500, lo in 100usize..400, extra in 0usize..800) {
        let r = report(c, seed);
        let small = format_hint(&r.gate.guidance, &r.records, lo).unwrap();
        let large = format_hint(&r.gate.guidance, &r.records, lo + extra).unwrap();
        prop_assert!(small.token_estimate <= lo);
        prop_assert!(large.token_estimate <= lo + extra);
        prop_assert_eq!(small.token_estimate, token_estimate(&small.text));
        for line in small.text.lines() {
            prop_assert!(line_survives(line, &large.text), "{:?} missing from\n{}", line, large.text);
        }
        for id in &small.cited_record_ids {
            prop_assert!(large.cited_record_ids.contains(id));
        }
    }

    #[test]
    fn reports_are_referentially_closed(c in category(), seed in 0u64..500) {
        let r = report(c, seed);
        prop_assert!(r.dangling_ids().is_empty(), "{:?}", r.dangling_ids());
        let max_step = r.spans.iter().map(|s| s.step).max().unwrap();
        for f in &r.findings {
            prop_assert!(!f.evidence_refs.is_empty(), "{:?} has no evidence", f.kind);
            prop_assert!(f.step_range.0 <= f.step_range.1 && f.step_range.1 <= max_step);
        }
        prop_assert_eq!(r.findings.len(), r.records.iter().map(|x| x.support.len()).sum::<usize>());
    }

    #[test]
    fn report_json_round_trips(c in category(), seed in 0u64..500) {
        let r = report(c, seed);
        let back = Report::from_json(&r.to_json()).unwrap();
        prop_assert_eq!(&back, &r);
        prop_assert_eq!(back.rehint(r.config.gate.budget_tokens).unwrap(), r.hint);
    }
}

#[test]
fn budget_below_floor_is_rejected() {
    let r = report(Category::StateWorkflow, 1);
    assert_eq!(r.rehint(99), Err(GateError::BudgetTooSmall(99)));
}

#[test]
fn pipeline_output_is_deterministic() {
    for c in Category::ALL {
        assert_eq!(report(c, 3).to_json(), report(c, 3).to_json(), "{c}");
    }
}

#[cfg(unix)]
mod backend {
    use super::*;
    use failscope::config::BackendConfig;
    use failscope::diagnose::{CommandBackend, DiagnosisOrigin};

    fn backend(script: &str) -> CommandBackend {
        CommandBackend::from_config(&BackendConfig::Command {
            program: "sh".into(),
            args: vec!["-c".into(), script.into()],
            timeout_ms: 5_000,
        })
        .unwrap()
    }

    #[test]
    fn backend_diagnosis_is_validated_and_used() {
        let trace = common::registration_case();
        let plain = run_pipeline(&trace, "golden", &Config::default(), None).unwrap();
        let rec = &plain.records[0].record_id;
        let script = format!(
            r#"cat > "$1" <<'JSON'
{{"primary_cause":{{"text":"Service 'user-service' targetPort points at the wrong container port","record_ids":["{rec}"]}},
"failure_anchor":{{"key":"registration path","category":"check","record_ids":["{rec}","rec-bogus"]}},
"behavioral_mistake":{{"text":"submitted before verification passed","record_ids":[]}},
"contributing_factors":[],"evidence_summary":"from backend","confidence":1.7}}
JSON"#
        );
        let b = backend(&script);
        let r = run_pipeline(&trace, "golden", &Config::default(), Some(&b)).unwrap();
        assert!(r.fallback_reason.is_none(), "{:?}", r.fallback_reason);
        assert_eq!(r.diagnosis.origin, DiagnosisOrigin::Backend);
        assert_eq!(r.diagnosis.confidence, 1.0);
        assert_eq!(r.diagnosis.failure_anchor.record_ids, vec![rec.clone()]);
        assert!(r.dangling_ids().is_empty());
    }

    #[test]
    fn failing_backend_falls_back() {
        let trace = common::registration_case();
        let plain = run_pipeline(&trace, "golden", &Config::default(), None).unwrap();
        for script in ["exit 3", "echo nope > \"$1\"", "echo '{}' > \"$1\""] {
            let r = run_pipeline(&trace, "golden", &Config::default(), Some(&backend(script))).unwrap();
            assert!(r.fallback_reason.is_some(), "{script}");
            assert_eq!(r.diagnosis, plain.diagnosis, "{script}");
            assert_eq!(r.hint, plain.hint);
        }
    }
}
