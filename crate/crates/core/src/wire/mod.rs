//! Telemetry data model, the JSON Lines trace format, and partitioning of a
//! trace into the six signal families.

mod bundle;
mod intent;
mod span;

use std::collections::{HashMap, HashSet};

use thiserror::Error;

pub use bundle::{
    build_bundle, LogEntry, OutcomeSignal, SignalFamily, StateMismatch, TelemetryBundle, ToolEnvState, ToolStatus,
    Verdict,
};
pub use intent::{infer_intent, IntentAnnotation, IntentLabel, IntentSource};
pub use span::{meta, parse_span_line, parse_span_line_capped, EventType, Span, Status, TRUNCATION_MARKER};

use crate::config::WireConfig;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed record{}: {reason}", .line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Malformed { line: Option<usize>, reason: String },
    #[error("trace contains no spans")]
    Empty,
    #[error("spans out of order: {span_id} (step {step}, ts {ts_ms}) follows a later span")]
    Ordering { span_id: String, step: u64, ts_ms: u64 },
}

impl WireError {
    pub(crate) fn malformed(reason: impl Into<String>) -> Self {
        WireError::Malformed {
            line: None,
            reason: reason.into(),
        }
    }

    fn at_line(self, line: usize) -> Self {
        match self {
            WireError::Malformed { reason, .. } => WireError::Malformed { line: Some(line), reason },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TraceRead {
    pub spans: Vec<Span>,
    /// (1-based line number, reason) for every skipped line.
    pub skipped: Vec<(usize, String)>,
}

/// Reads a whole trace. Blank lines are ignored; malformed lines abort the
/// read unless `cfg.skip_malformed` is set.
pub fn read_trace(text: &str, cfg: &WireConfig) -> Result<TraceRead, WireError> {
    let mut out = TraceRead::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_span_line_capped(line, cfg.payload_cap_bytes) {
            Ok(span) => out.spans.push(span),
            Err(e) if cfg.skip_malformed => out.skipped.push((idx + 1, e.to_string())),
            Err(e) => return Err(e.at_line(idx + 1)),
        }
    }
    if out.spans.is_empty() {
        return Err(WireError::Empty);
    }
    Ok(out)
}

pub fn write_trace(spans: &[Span]) -> String {
    let mut out = String::new();
    for s in spans {
        out.push_str(&s.to_line());
        out.push('\n');
    }
    out
}

/// A broken structural invariant in a span list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateId(String),
    UnknownParent { span_id: String, parent_id: String },
    ParentNotEarlier { span_id: String, parent_id: String },
    StepDecreases { span_id: String },
    OrphanToolReturn { span_id: String },
}

/// Checks the span invariants of a trace in file order.
pub fn validate_trace(spans: &[Span]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut steps: HashMap<&str, u64> = HashMap::new();
    let mut called: HashSet<&str> = HashSet::new();
    let mut last_step = 0;
    for s in spans {
        if steps.insert(&s.span_id, s.step).is_some() {
            out.push(Violation::DuplicateId(s.span_id.clone()));
        }
        if s.step < last_step {
            out.push(Violation::StepDecreases {
                span_id: s.span_id.clone(),
            });
        }
        last_step = last_step.max(s.step);
        if let Some(parent) = &s.parent_id {
            match steps.get(parent.as_str()) {
                None => out.push(Violation::UnknownParent {
                    span_id: s.span_id.clone(),
                    parent_id: parent.clone(),
                }),
                Some(&ps) if ps >= s.step => out.push(Violation::ParentNotEarlier {
                    span_id: s.span_id.clone(),
                    parent_id: parent.clone(),
                }),
                Some(_) => {}
            }
        }
        match s.event {
            EventType::ToolCall => {
                if let Some(t) = s.tool() {
                    called.insert(t);
                }
            }
            EventType::ToolReturn if !s.tool().is_some_and(|t| called.contains(t)) => {
                out.push(Violation::OrphanToolReturn {
                    span_id: s.span_id.clone(),
                });
            }
            _ => {}
        }
    }
    out
}
