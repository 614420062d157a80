use serde::{Deserialize, Serialize};

use super::{meta, EventType, Span};
use crate::config::IntentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentLabel {
    GatherEvidence,
    EditArtifact,
    RunVerification,
    PrepareSubmission,
    Other,
}

impl IntentLabel {
    pub const ALL: [IntentLabel; 5] = [
        IntentLabel::GatherEvidence,
        IntentLabel::EditArtifact,
        IntentLabel::RunVerification,
        IntentLabel::PrepareSubmission,
        IntentLabel::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IntentLabel::GatherEvidence => "gather_evidence",
            IntentLabel::EditArtifact => "edit_artifact",
            IntentLabel::RunVerification => "run_verification",
            IntentLabel::PrepareSubmission => "prepare_submission",
            IntentLabel::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentSource {
    Explicit,
    Inferred,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentAnnotation {
    pub step: u64,
    pub label: IntentLabel,
    pub source: IntentSource,
    /// Span the label was read from or that decided the inference.
    pub span_id: String,
}

/// Event types that never originate from the agent's own decision.
fn is_passive(event: EventType) -> bool {
    matches!(
        event,
        EventType::ToolReturn | EventType::EnvObservation | EventType::MetricSnapshot | EventType::OutcomeVerdict
    )
}

/// Labels one step from its own spans only (no look-ahead).
///
/// First matching rule wins: submission, verifier result, edit-tool call,
/// any other tool call, otherwise `other`. A step made up entirely of
/// passive observations (tool returns, environment, metrics, outcome)
/// inherits the previous step's label when one is given.
///
/// # Panics
/// If `step_spans` is empty.
pub fn infer_intent(step_spans: &[Span], prior: Option<&IntentAnnotation>, cfg: &IntentConfig) -> IntentAnnotation {
    let first = step_spans.first().expect("infer_intent needs at least one span");
    let step = first.step;
    let annotate = |label, span: &Span| IntentAnnotation {
        step,
        label,
        source: IntentSource::Inferred,
        span_id: span.span_id.clone(),
    };

    if let Some(s) = step_spans.iter().find(|s| s.event == EventType::Submission) {
        return annotate(IntentLabel::PrepareSubmission, s);
    }
    if let Some(s) = step_spans.iter().find(|s| s.event == EventType::VerifierResult) {
        return annotate(IntentLabel::RunVerification, s);
    }
    let is_edit = |s: &&Span| s.tool().is_some_and(|t| cfg.edit_tools.iter().any(|e| e == t));
    let calls: Vec<&Span> = step_spans.iter().filter(|s| s.event == EventType::ToolCall).collect();
    if let Some(s) = calls.iter().copied().find(is_edit) {
        return annotate(IntentLabel::EditArtifact, s);
    }
    if let Some(s) = calls.first() {
        return annotate(IntentLabel::GatherEvidence, s);
    }
    if let Some(p) = prior {
        if step_spans.iter().all(|s| is_passive(s.event)) {
            return annotate(p.label, first);
        }
    }
    annotate(IntentLabel::Other, first)
}

/// Explicit label carried in `meta.intent` by any span of the step.
pub(crate) fn explicit_intent(step_spans: &[Span]) -> Option<IntentAnnotation> {
    step_spans.iter().find_map(|s| {
        let label = IntentLabel::parse(s.meta_str(meta::INTENT)?)?;
        Some(IntentAnnotation {
            step: s.step,
            label,
            source: IntentSource::Explicit,
            span_id: s.span_id.clone(),
        })
    })
}
