use super::{AnchorField, CitedText, DiagnoseError, DiagnosisOrigin, Factor, StructuredDiagnosis};
use crate::config::DiagnoseConfig;
use crate::fuse::{EvidenceUnit, FusedEvidenceRecord};
use crate::localize::{Anchor, AnchorCategory, FindingKind, InfraClass};
use crate::util::clip_chars;
use crate::wire::{EventType, Status, TelemetryBundle};

pub const MISTAKE_CLAIMED: &str = "claimed success without verification";
pub const MISTAKE_REPEATED: &str = "repeated ineffective action without adaptation";
pub const MISTAKE_PREMATURE: &str = "submitted before verification passed";
pub const MISTAKE_UNVERIFIED: &str = "stopped without verifying outcome";

const RUN_UNRESOLVED: &str = "run-unresolved";

/// A submission exists and no passing verifier result precedes the first one.
pub fn premature_submission(bundle: &TelemetryBundle) -> bool {
    let Some(first) = bundle.traces.iter().position(|s| s.event == EventType::Submission) else {
        return false;
    };
    !bundle.traces[..first]
        .iter()
        .any(|s| s.event == EventType::VerifierResult && s.status == Status::Ok)
}

fn mismatch_text(u: &EvidenceUnit) -> Option<String> {
    u.mismatch
        .as_ref()
        .map(|m| format!("state '{}' is {} but {} is expected", m.key, m.observed, m.expected))
}

/// Templated cause text for a record, keyed on its lead unit.
pub fn primary_cause_text(record: &FusedEvidenceRecord) -> String {
    let lead = record.lead();
    let base = match lead.origin_kind {
        FindingKind::ExecutionError => match mismatch_text(lead) {
            Some(m) => m,
            None => {
                let tool = lead.tool.as_deref().unwrap_or("agent runtime");
                match lead.infra_class {
                    Some(c) if c != InfraClass::None => {
                        format!("tool '{tool}' repeatedly failed with {} errors", c.describe())
                    }
                    _ => format!(
                        "tool '{tool}' repeatedly failed ({})",
                        lead.signature.as_deref().unwrap_or(&lead.anchor.key)
                    ),
                }
            }
        },
        FindingKind::OutcomeMismatch => match lead.anchor.category {
            AnchorCategory::Check => format!("required check '{}' never passed", lead.anchor.key),
            AnchorCategory::Claim => "success was claimed but the evaluator left the run unresolved".into(),
            _ => "run ended unresolved without a passing verification".into(),
        },
        FindingKind::RepeatedFailure => format!("action '{}' retried without progress", lead.anchor.key),
        FindingKind::IntentSurprise => format!("erratic strategy shift near step {}", lead.time_scope.1),
        FindingKind::AggregateMetricAnomaly => "resource use without commensurate progress".into(),
        FindingKind::InfrastructureClue => format!(
            "environment-level condition: {}",
            lead.infra_class.unwrap_or(InfraClass::None).describe()
        ),
        FindingKind::MetricAnomaly => format!(
            "metric '{}' left its usual range in steps {}-{}",
            lead.anchor.key, lead.time_scope.0, lead.time_scope.1
        ),
        FindingKind::PatternSummary => "run ended without a localized failure".into(),
    };
    let extra = if lead.mismatch.is_none() {
        record.support.iter().find_map(mismatch_text)
    } else {
        None
    };
    match extra {
        Some(m) => format!("{base}; {m}"),
        None => base,
    }
}

fn ids_where(records: &[FusedEvidenceRecord], pred: impl Fn(&FusedEvidenceRecord) -> bool) -> Vec<String> {
    records.iter().filter(|r| pred(r)).map(|r| r.record_id.clone()).collect()
}

fn behavioral_mistake(records: &[FusedEvidenceRecord], bundle: &TelemetryBundle) -> CitedText {
    let outcome_ids = || {
        let ids = ids_where(records, |r| r.has_kind(FindingKind::OutcomeMismatch));
        if ids.is_empty() {
            vec![records[0].record_id.clone()]
        } else {
            ids
        }
    };
    let claimed = ids_where(records, FusedEvidenceRecord::has_claim_conflict);
    if !claimed.is_empty() {
        return CitedText {
            text: MISTAKE_CLAIMED.into(),
            record_ids: claimed,
        };
    }
    let repeated = ids_where(records, |r| r.has_kind(FindingKind::RepeatedFailure));
    if !repeated.is_empty() {
        return CitedText {
            text: MISTAKE_REPEATED.into(),
            record_ids: repeated,
        };
    }
    let text = if premature_submission(bundle) {
        MISTAKE_PREMATURE
    } else {
        MISTAKE_UNVERIFIED
    };
    CitedText {
        text: text.into(),
        record_ids: outcome_ids(),
    }
}

fn summary_line(r: &FusedEvidenceRecord) -> String {
    let sources: Vec<String> = r.sources.iter().map(ToString::to_string).collect();
    format!(
        "{} [{:?}] {} steps {}-{} ({}): {}",
        r.record_id,
        r.severity,
        r.anchor,
        r.time_scope.0,
        r.time_scope.1,
        sources.join("+"),
        r.lead().detail
    )
    .to_lowercase()
}

/// Deterministic diagnosis built only from fused records and the bundle.
pub fn fallback_diagnose(
    records: &[FusedEvidenceRecord],
    bundle: &TelemetryBundle,
    cfg: &DiagnoseConfig,
) -> Result<StructuredDiagnosis, DiagnoseError> {
    let confidence = cfg.fallback_confidence.clamp(0.0, 1.0);
    let Some(top) = records.first() else {
        if bundle.outcome.is_none() {
            return Err(DiagnoseError::NoEvidence);
        }
        return Ok(StructuredDiagnosis {
            primary_cause: CitedText {
                text: "run ended unresolved without localized evidence".into(),
                record_ids: Vec::new(),
            },
            failure_anchor: AnchorField {
                anchor: Anchor::new(RUN_UNRESOLVED, AnchorCategory::Outcome),
                record_ids: Vec::new(),
            },
            behavioral_mistake: CitedText {
                text: MISTAKE_UNVERIFIED.into(),
                record_ids: Vec::new(),
            },
            contributing_factors: Vec::new(),
            evidence_summary: String::new(),
            confidence,
            origin: DiagnosisOrigin::Fallback,
        });
    };

    let top_ids = vec![top.record_id.clone()];
    let contributing_factors = records[1..]
        .iter()
        .take(cfg.max_factors)
        .map(|r| Factor {
            text: primary_cause_text(r),
            record_id: Some(r.record_id.clone()),
        })
        .collect();
    let summary = records
        .iter()
        .take(cfg.top_k)
        .map(summary_line)
        .collect::<Vec<_>>()
        .join("\n");

    Ok(StructuredDiagnosis {
        primary_cause: CitedText {
            text: primary_cause_text(top),
            record_ids: top_ids.clone(),
        },
        failure_anchor: AnchorField {
            anchor: top.anchor.clone(),
            record_ids: top_ids,
        },
        behavioral_mistake: behavioral_mistake(records, bundle),
        contributing_factors,
        evidence_summary: clip_chars(&summary, cfg.summary_max_chars),
        confidence,
        origin: DiagnosisOrigin::Fallback,
    })
}
