//! Signal-specific detectors that turn a telemetry bundle into typed,
//! scored, span-referenced findings.

mod errors;
mod iforest;
mod ngram;
mod outcome;
mod robust;
mod signature;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use errors::{detect_repeated_failures, group_error_findings, state_mismatch_findings};
pub use iforest::{average_path_length, detect_aggregate_anomaly, most_anomalous_window, IsolationForest};
pub use ngram::{score_intent_transitions, transition_surprises, BigramModel};
pub use outcome::{outcome_findings, pattern_summary};
pub use robust::{
    detect_metric_anomalies, mad, median, metric_findings, quantile, robust_z_scores, tail_direction, MetricAnomaly,
    TailDirection, MAD_CONSISTENCY,
};
pub use signature::{canonicalize_error, extract_entities, ErrorSignature, InfraClass};

use crate::config::LocalizeConfig;
use crate::metrics::MetricWindow;
use crate::util::collapse_whitespace;
use crate::wire::{SignalFamily, TelemetryBundle};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LocalizeError {
    #[error("cannot canonicalize an empty error message")]
    EmptyInput,
    #[error("bundle has no outcome family")]
    NoOutcomeFamily,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    MetricAnomaly,
    AggregateMetricAnomaly,
    ExecutionError,
    RepeatedFailure,
    IntentSurprise,
    PatternSummary,
    OutcomeMismatch,
    InfrastructureClue,
}

impl FindingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingKind::MetricAnomaly => "metric_anomaly",
            FindingKind::AggregateMetricAnomaly => "aggregate_metric_anomaly",
            FindingKind::ExecutionError => "execution_error",
            FindingKind::RepeatedFailure => "repeated_failure",
            FindingKind::IntentSurprise => "intent_surprise",
            FindingKind::PatternSummary => "pattern_summary",
            FindingKind::OutcomeMismatch => "outcome_mismatch",
            FindingKind::InfrastructureClue => "infrastructure_clue",
        }
    }
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorCategory {
    Tool,
    ArgumentFingerprint,
    ErrorSignature,
    ReturnCode,
    Metric,
    Check,
    State,
    Outcome,
    Claim,
    Infrastructure,
    Transition,
    Timeline,
    Window,
}

/// A stable grouping key: lowercased, whitespace-collapsed, never empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Anchor {
    pub key: String,
    pub category: AnchorCategory,
}

impl Anchor {
    pub fn new(key: &str, category: AnchorCategory) -> Self {
        let key = collapse_whitespace(key).to_lowercase();
        Anchor {
            key: if key.is_empty() { "unknown".into() } else { key },
            category,
        }
    }

    /// Anchors the agent can act on directly.
    pub fn is_agent_side(&self) -> bool {
        matches!(
            self.category,
            AnchorCategory::Tool | AnchorCategory::ArgumentFingerprint | AnchorCategory::State | AnchorCategory::Check
        )
    }
}

impl fmt::Display for Anchor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}:{}", self.category, self.key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Low,
    Medium,
    High,
}

/// Concrete things a finding points at, used for guidance targets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entities {
    pub artifacts: BTreeSet<String>,
    pub services: BTreeSet<String>,
    pub tools: BTreeSet<String>,
    pub checks: BTreeSet<String>,
}

impl Entities {
    pub fn extend(&mut self, other: &Entities) {
        self.artifacts.extend(other.artifacts.iter().cloned());
        self.services.extend(other.services.iter().cloned());
        self.tools.extend(other.tools.iter().cloned());
        self.checks.extend(other.checks.iter().cloned());
    }

    pub fn is_empty(&self) -> bool {
        self.artifacts.is_empty() && self.services.is_empty() && self.tools.is_empty() && self.checks.is_empty()
    }

    /// Case-insensitive membership across all entity sets.
    pub fn mentions(&self, name: &str) -> bool {
        let name = name.to_lowercase();
        [&self.artifacts, &self.services, &self.tools, &self.checks]
            .iter()
            .any(|set| set.iter().any(|e| e.to_lowercase() == name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchDetail {
    pub key: String,
    pub observed: String,
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizedFinding {
    pub kind: FindingKind,
    pub anchor: Anchor,
    pub source_family: SignalFamily,
    pub step_range: (u64, u64),
    pub severity: Severity,
    pub score: f64,
    pub evidence_refs: Vec<String>,
    /// Tool involved, if any. Drives time-compatible fusion.
    pub tool: Option<String>,
    pub signature: Option<String>,
    pub infra_class: Option<InfraClass>,
    pub mismatch: Option<MismatchDetail>,
    pub entities: Entities,
    pub detail: String,
}

impl LocalizedFinding {
    pub(crate) fn new(
        kind: FindingKind,
        anchor: Anchor,
        source_family: SignalFamily,
        step_range: (u64, u64),
        severity: Severity,
        score: f64,
        evidence_refs: Vec<String>,
    ) -> Self {
        LocalizedFinding {
            kind,
            anchor,
            source_family,
            step_range,
            severity,
            score,
            evidence_refs,
            tool: None,
            signature: None,
            infra_class: None,
            mismatch: None,
            entities: Entities::default(),
            detail: String::new(),
        }
    }

    fn sort_key(&self) -> (FindingKind, &Anchor, u64) {
        (self.kind, &self.anchor, self.step_range.0)
    }
}

/// Runs every detector and merges the results in (kind, anchor, start step)
/// order. The aggregate isolation-forest detector only runs when no
/// per-metric anomaly fired.
pub fn localize_all(bundle: &TelemetryBundle, windows: &[MetricWindow], cfg: &LocalizeConfig) -> Vec<LocalizedFinding> {
    let mut out = metric_findings(bundle, windows, cfg);
    if out.is_empty() {
        out.extend(detect_aggregate_anomaly(bundle, windows, cfg));
    }
    out.extend(group_error_findings(bundle));
    out.extend(state_mismatch_findings(bundle));
    out.extend(detect_repeated_failures(bundle, cfg.repeat_min));
    out.extend(score_intent_transitions(&bundle.intent, cfg));
    if let Ok(found) = outcome_findings(bundle, &cfg.claim_phrases) {
        out.extend(found);
    }
    out.extend(pattern_summary(bundle));
    out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_is_normalized() {
        let a = Anchor::new("  Connect   TO  x ", AnchorCategory::ErrorSignature);
        assert_eq!(a.key, "connect to x");
        assert_eq!(Anchor::new("   ", AnchorCategory::Tool).key, "unknown");
    }

    #[test]
    fn severity_orders_low_to_high() {
        assert!(Severity::High > Severity::Medium && Severity::Medium > Severity::Low);
    }
}
