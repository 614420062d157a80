//! Structured diagnosis: backend context assembly, schema validation of
//! backend output, and the deterministic fallback summarizer.

mod backend;
mod fallback;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use backend::{run_diagnosis, BackendError, CommandBackend, DiagnosisBackend, DiagnosisRun};
pub use fallback::{fallback_diagnose, premature_submission, primary_cause_text, MISTAKE_CLAIMED, MISTAKE_PREMATURE,
    MISTAKE_REPEATED, MISTAKE_UNVERIFIED};

use crate::config::DiagnoseConfig;
use crate::fuse::FusedEvidenceRecord;
use crate::localize::Anchor;
use crate::wire::{meta, TelemetryBundle, Verdict};

#[derive(Debug, Error)]
pub enum DiagnoseError {
    #[error("diagnosis does not match the schema: {0}")]
    SchemaViolation(String),
    #[error("failure anchor cites no fused evidence")]
    UnsupportedAnchor,
    #[error("no fused evidence and no outcome family to diagnose from")]
    NoEvidence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitedText {
    pub text: String,
    #[serde(default)]
    pub record_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorField {
    #[serde(flatten)]
    pub anchor: Anchor,
    #[serde(default)]
    pub record_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub text: String,
    #[serde(default)]
    pub record_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosisOrigin {
    Backend,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredDiagnosis {
    pub primary_cause: CitedText,
    pub failure_anchor: AnchorField,
    pub behavioral_mistake: CitedText,
    pub contributing_factors: Vec<Factor>,
    pub evidence_summary: String,
    pub confidence: f64,
    pub origin: DiagnosisOrigin,
}

impl StructuredDiagnosis {
    /// Every record id the diagnosis cites anywhere.
    pub fn cited_ids(&self) -> Vec<&str> {
        self.primary_cause
            .record_ids
            .iter()
            .chain(&self.failure_anchor.record_ids)
            .chain(&self.behavioral_mistake.record_ids)
            .map(String::as_str)
            .chain(self.contributing_factors.iter().filter_map(|f| f.record_id.as_deref()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunDigest {
    pub step_count: usize,
    pub span_count: usize,
    pub intent_histogram: BTreeMap<String, usize>,
    pub final_outcome: Option<Verdict>,
    pub failing_checks: Vec<String>,
    pub premature_submission: bool,
}

/// What a diagnosis backend sees: the top fused records and a run digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisContext {
    pub task: String,
    pub digest: RunDigest,
    pub records: Vec<FusedEvidenceRecord>,
}

pub fn run_digest(bundle: &TelemetryBundle) -> RunDigest {
    let mut intent_histogram = BTreeMap::new();
    for a in &bundle.intent {
        *intent_histogram.entry(a.label.as_str().to_string()).or_default() += 1;
    }
    let failing_checks = bundle
        .outcome
        .as_ref()
        .and_then(|o| o.last())
        .map(|o| o.failing_checks.clone())
        .unwrap_or_default();
    RunDigest {
        step_count: bundle.intent.len(),
        span_count: bundle.traces.len(),
        intent_histogram,
        final_outcome: bundle.final_verdict(),
        failing_checks,
        premature_submission: premature_submission(bundle),
    }
}

/// Task description from the recorder header, if any.
pub fn task_of(bundle: &TelemetryBundle) -> String {
    bundle
        .traces
        .iter()
        .find(|s| s.role() == Some("header"))
        .and_then(|s| s.meta_str("task"))
        .unwrap_or("")
        .to_string()
}

pub fn build_context(records: &[FusedEvidenceRecord], bundle: &TelemetryBundle, top_k: usize) -> DiagnosisContext {
    DiagnosisContext {
        task: task_of(bundle),
        digest: run_digest(bundle),
        records: records.iter().take(top_k).cloned().collect(),
    }
}

#[derive(Deserialize)]
struct RawDiagnosis {
    primary_cause: CitedText,
    failure_anchor: AnchorField,
    behavioral_mistake: CitedText,
    #[serde(default)]
    contributing_factors: Vec<Factor>,
    evidence_summary: String,
    confidence: f64,
}

/// Checks backend output against the schema: confidence clipped to [0,1],
/// factors truncated, unknown record ids dropped. Fails when the anchor is
/// left without any resolvable record.
pub fn validate_diagnosis(
    raw: &Value,
    records: &[FusedEvidenceRecord],
    cfg: &DiagnoseConfig,
) -> Result<StructuredDiagnosis, DiagnoseError> {
    let parsed: RawDiagnosis =
        serde_json::from_value(raw.clone()).map_err(|e| DiagnoseError::SchemaViolation(e.to_string()))?;
    let known: HashSet<&str> = records.iter().map(|r| r.record_id.as_str()).collect();
    let keep = |ids: Vec<String>| -> Vec<String> { ids.into_iter().filter(|id| known.contains(id.as_str())).collect() };

    let failure_anchor = AnchorField {
        anchor: Anchor::new(&parsed.failure_anchor.anchor.key, parsed.failure_anchor.anchor.category),
        record_ids: keep(parsed.failure_anchor.record_ids),
    };
    if failure_anchor.record_ids.is_empty() {
        return Err(DiagnoseError::UnsupportedAnchor);
    }
    let confidence = if parsed.confidence.is_nan() {
        0.0
    } else {
        parsed.confidence.clamp(0.0, 1.0)
    };
    Ok(StructuredDiagnosis {
        primary_cause: CitedText {
            text: parsed.primary_cause.text,
            record_ids: keep(parsed.primary_cause.record_ids),
        },
        failure_anchor,
        behavioral_mistake: CitedText {
            text: parsed.behavioral_mistake.text,
            record_ids: keep(parsed.behavioral_mistake.record_ids),
        },
        contributing_factors: parsed
            .contributing_factors
            .into_iter()
            .take(cfg.max_factors)
            .map(|f| Factor {
                record_id: f.record_id.filter(|id| known.contains(id.as_str())),
                text: f.text,
            })
            .collect(),
        evidence_summary: crate::util::clip_chars(&parsed.evidence_summary, cfg.summary_max_chars),
        confidence,
        origin: DiagnosisOrigin::Backend,
    })
}

/// Reads the recorder's run id from the header, when present.
pub fn run_id_of(bundle: &TelemetryBundle) -> Option<String> {
    bundle
        .traces
        .iter()
        .find(|s| s.role() == Some("header"))
        .and_then(|s| s.meta_str(meta::RUN_ID))
        .map(String::from)
}
