use std::collections::BTreeMap;

use super::{Anchor, AnchorCategory, FindingKind, LocalizeError, LocalizedFinding, Severity};
use crate::wire::{meta, EventType, SignalFamily, Span, TelemetryBundle, Verdict};

pub const RUN_UNRESOLVED: &str = "run-unresolved";
pub const SUCCESS_CLAIM: &str = "success-claim";

fn claims_success(s: &Span, phrases: &[String]) -> bool {
    let text = s.payload.to_lowercase();
    phrases.iter().any(|p| !p.is_empty() && text.contains(&p.to_lowercase()))
}

/// Evaluator evidence as findings: one `outcome_mismatch` per failing check
/// (or a single `run-unresolved` one when an unresolved verdict names no
/// checks), plus a `success-claim` mismatch when the agent claimed success
/// and the final verdict is unresolved.
pub fn outcome_findings(bundle: &TelemetryBundle, claim_phrases: &[String]) -> Result<Vec<LocalizedFinding>, LocalizeError> {
    let outcome = bundle.outcome.as_ref().ok_or(LocalizeError::NoOutcomeFamily)?;
    let Some(last) = outcome.last() else {
        return Ok(Vec::new());
    };

    let mut checks: BTreeMap<&str, &crate::wire::OutcomeSignal> = BTreeMap::new();
    for o in outcome.iter().filter(|o| o.verdict != Verdict::Resolved) {
        for c in &o.failing_checks {
            checks.insert(c, o);
        }
    }

    let mut out = Vec::new();
    for (check, o) in &checks {
        let mut f = LocalizedFinding::new(
            FindingKind::OutcomeMismatch,
            Anchor::new(check, AnchorCategory::Check),
            SignalFamily::Outcome,
            (o.step, o.step),
            Severity::High,
            1.0,
            vec![o.span_id.clone()],
        );
        f.entities.checks.insert(check.to_string());
        f.detail = format!("required check '{check}' failed");
        out.push(f);
    }
    if last.verdict == Verdict::Unresolved && checks.is_empty() {
        let mut f = LocalizedFinding::new(
            FindingKind::OutcomeMismatch,
            Anchor::new(RUN_UNRESOLVED, AnchorCategory::Outcome),
            SignalFamily::Outcome,
            (last.step, last.step),
            Severity::High,
            1.0,
            vec![last.span_id.clone()],
        );
        f.detail = "evaluator judged the run unresolved".into();
        out.push(f);
    }

    if last.verdict == Verdict::Unresolved {
        let claims: Vec<&Span> = bundle
            .traces
            .iter()
            .filter(|s| s.event == EventType::ModelResponse && claims_success(s, claim_phrases))
            .collect();
        if let Some(first) = claims.first() {
            let mut refs: Vec<String> = claims.iter().map(|s| s.span_id.clone()).collect();
            refs.push(last.span_id.clone());
            let mut f = LocalizedFinding::new(
                FindingKind::OutcomeMismatch,
                Anchor::new(SUCCESS_CLAIM, AnchorCategory::Claim),
                SignalFamily::Outcome,
                (first.step, last.step.max(first.step)),
                Severity::High,
                claims.len() as f64,
                refs,
            );
            f.detail = format!(
                "agent claimed success at step {} but the evaluator verdict is unresolved",
                first.step
            );
            out.push(f);
        }
    }
    Ok(out)
}

/// Structural digest of the run: step count, intent histogram, last
/// verification and last outcome.
pub fn pattern_summary(bundle: &TelemetryBundle) -> Option<LocalizedFinding> {
    let last_span = bundle.traces.last()?;
    let mut hist: BTreeMap<&str, usize> = BTreeMap::new();
    for a in &bundle.intent {
        *hist.entry(a.label.as_str()).or_default() += 1;
    }
    let last_verify = bundle.traces.iter().rev().find(|s| s.event == EventType::VerifierResult);
    let last_outcome = bundle.outcome.as_ref().and_then(|o| o.last());

    let mut refs = Vec::new();
    if let Some(v) = last_verify {
        refs.push(v.span_id.clone());
    }
    if let Some(o) = last_outcome {
        refs.push(o.span_id.clone());
    }
    if refs.is_empty() {
        refs.push(last_span.span_id.clone());
    }

    let intents = hist.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ");
    let verify = match last_verify {
        Some(v) => format!(
            "check '{}' {:?} at step {}",
            v.meta_str(meta::CHECK).unwrap_or("?"),
            v.status,
            v.step
        )
        .to_lowercase(),
        None => "none".into(),
    };
    let outcome = match last_outcome {
        Some(o) => format!("{:?}", o.verdict).to_lowercase(),
        None => "absent".into(),
    };
    let mut f = LocalizedFinding::new(
        FindingKind::PatternSummary,
        Anchor::new("run-timeline", AnchorCategory::Timeline),
        SignalFamily::Traces,
        (bundle.traces[0].step, last_span.step),
        Severity::Low,
        bundle.intent.len() as f64,
        refs,
    );
    f.detail = format!(
        "{} steps; intents: {intents}; last verification: {verify}; outcome: {outcome}",
        bundle.intent.len()
    );
    Some(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{IntentConfig, LocalizeConfig};
    use crate::wire::{build_bundle, Status};
    use serde_json::json;

    fn verdict(checks: &[&str]) -> Span {
        Span::new("v", 9, 90, EventType::OutcomeVerdict, Status::Error)
            .with_meta(meta::VERDICT, "unresolved")
            .with_meta(meta::FAILING_CHECKS, json!(checks))
    }

    fn phrases() -> Vec<String> {
        LocalizeConfig::default().claim_phrases
    }

    #[test]
    fn one_finding_per_failing_check() {
        let b = build_bundle(vec![verdict(&["test_a", "test_b"])], true, &IntentConfig::default()).unwrap();
        let f = outcome_findings(&b, &phrases()).unwrap();
        assert_eq!(f.len(), 2);
        assert!(f.iter().all(|f| f.kind == FindingKind::OutcomeMismatch && f.severity == Severity::High));
    }

    #[test]
    fn success_claim_contradiction() {
        let spans = vec![
            Span::new("m", 5, 50, EventType::ModelResponse, Status::Ok).with_payload("The task completed successfully."),
            verdict(&[]),
        ];
        let b = build_bundle(spans, true, &IntentConfig::default()).unwrap();
        let f = outcome_findings(&b, &phrases()).unwrap();
        let claim = f.iter().find(|f| f.anchor.category == AnchorCategory::Claim).unwrap();
        assert_eq!(claim.evidence_refs, vec!["m", "v"]);
        assert_eq!(claim.step_range, (5, 9));
        assert!(f.iter().any(|f| f.anchor.key == RUN_UNRESOLVED));
    }

    #[test]
    fn missing_outcome_family() {
        let b = build_bundle(
            vec![Span::new("m", 0, 0, EventType::ModelResponse, Status::Ok)],
            true,
            &IntentConfig::default(),
        )
        .unwrap();
        assert_eq!(outcome_findings(&b, &phrases()), Err(LocalizeError::NoOutcomeFamily));
    }

    #[test]
    fn resolved_run_has_no_mismatch() {
        let spans = vec![
            Span::new("m", 0, 0, EventType::ModelResponse, Status::Ok).with_payload("fix verified"),
            Span::new("v", 1, 1, EventType::OutcomeVerdict, Status::Ok).with_meta(meta::VERDICT, "resolved"),
        ];
        let b = build_bundle(spans, true, &IntentConfig::default()).unwrap();
        assert!(outcome_findings(&b, &phrases()).unwrap().is_empty());
    }

    #[test]
    fn summary_digest() {
        let spans = vec![
            Span::new("c", 0, 0, EventType::VerifierResult, Status::Error).with_meta(meta::CHECK, "unit"),
            verdict(&["unit"]),
        ];
        let b = build_bundle(spans, true, &IntentConfig::default()).unwrap();
        let f = pattern_summary(&b).unwrap();
        assert_eq!(f.evidence_refs, vec!["c", "v"]);
        assert!(f.detail.contains("check 'unit' error at step 0"), "{}", f.detail);
        assert!(f.detail.contains("outcome: unresolved"));
    }
}
