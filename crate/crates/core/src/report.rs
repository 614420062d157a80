//! The self-contained report written for one diagnosed run.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::diagnose::StructuredDiagnosis;
use crate::fuse::FusedEvidenceRecord;
use crate::gate::{format_hint, GateError, GateOutcome, HintBlock};
use crate::localize::LocalizedFinding;
use crate::metrics::MetricWindow;
use crate::wire::{Span, Verdict};

pub const SCHEMA_VERSION: u32 = 1;
pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub run_id: Option<String>,
    pub task: String,
    pub source: String,
    pub span_count: usize,
    pub step_count: usize,
    pub final_verdict: Option<Verdict>,
    /// (line, reason) for malformed lines skipped while reading.
    pub skipped_lines: Vec<(usize, String)>,
    /// Wall-clock creation time; absent in deterministic mode.
    pub generated_at_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub pipeline_version: String,
    pub run: RunMetadata,
    pub spans: Vec<Span>,
    pub windows: Vec<MetricWindow>,
    pub findings: Vec<LocalizedFinding>,
    pub records: Vec<FusedEvidenceRecord>,
    pub diagnosis: StructuredDiagnosis,
    pub fallback_reason: Option<String>,
    pub gate: GateOutcome,
    pub hint: HintBlock,
    pub config: Config,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Re-renders the stored guidance at another budget.
    pub fn rehint(&self, budget_tokens: usize) -> Result<HintBlock, GateError> {
        format_hint(&self.gate.guidance, &self.records, budget_tokens)
    }

    /// Every id referenced in the report that does not resolve inside it.
    pub fn dangling_ids(&self) -> Vec<String> {
        let spans: BTreeSet<&str> = self.spans.iter().map(|s| s.span_id.as_str()).collect();
        let records: BTreeSet<&str> = self.records.iter().map(|r| r.record_id.as_str()).collect();
        let mut out = Vec::new();
        let span_refs = self
            .findings
            .iter()
            .flat_map(|f| &f.evidence_refs)
            .chain(self.records.iter().flat_map(|r| r.support.iter().flat_map(|u| &u.evidence_ref)));
        for id in span_refs {
            if !spans.contains(id.as_str()) {
                out.push(id.clone());
            }
        }
        let g = &self.gate.guidance;
        let record_refs = self
            .diagnosis
            .cited_ids()
            .into_iter()
            .chain(g.target.iter().map(|t| t.record_id.as_str()))
            .chain(g.evidence_ids.iter().map(String::as_str))
            .chain(self.gate.grounding.supporting.iter().map(String::as_str))
            .chain(self.hint.cited_record_ids.iter().map(String::as_str));
        for id in record_refs {
            if !records.contains(id) {
                out.push(id.to_string());
            }
        }
        for r in &self.records {
            for c in &r.conflicts {
                if c.left >= r.support.len() || c.right >= r.support.len() {
                    out.push(format!("{}#conflict", r.record_id));
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// Short human-readable digest.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let d = &self.diagnosis;
        let g = &self.gate.guidance;
        let _ = writeln!(
            s,
            "run {} ({} spans, {} steps, verdict {})",
            self.run.run_id.as_deref().unwrap_or("-"),
            self.run.span_count,
            self.run.step_count,
            self.run
                .final_verdict
                .map(|v| format!("{v:?}").to_lowercase())
                .unwrap_or_else(|| "absent".into())
        );
        let _ = writeln!(s, "findings: {}  records: {}", self.findings.len(), self.records.len());
        let _ = writeln!(s, "cause: {}", d.primary_cause.text);
        let _ = writeln!(s, "anchor: {}", d.failure_anchor.anchor);
        let _ = writeln!(s, "mistake: {}", d.behavioral_mistake.text);
        let _ = writeln!(s, "confidence: {:.2} ({:?})", d.confidence, d.origin);
        if let Some(reason) = &self.fallback_reason {
            let _ = writeln!(s, "backend fallback: {reason}");
        }
        match g.non_injectable_reason {
            None => {
                let _ = writeln!(s, "guidance: injectable");
            }
            Some(r) => {
                let _ = writeln!(s, "guidance: blocked ({r:?})");
            }
        }
        for r in self.records.iter().take(5) {
            let conflict = if r.conflicts.is_empty() { "" } else { " [conflict]" };
            let _ = writeln!(
                s,
                "  {} {:?} {} steps {}-{} support {}{conflict}",
                r.record_id,
                r.severity,
                r.anchor,
                r.time_scope.0,
                r.time_scope.1,
                r.support.len()
            );
        }
        s
    }
}
