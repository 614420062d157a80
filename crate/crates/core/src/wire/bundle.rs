use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::intent::explicit_intent;
use super::{infer_intent, meta, EventType, IntentAnnotation, Span, Status, WireError};
use crate::config::IntentConfig;
use crate::localize::canonicalize_error;
use crate::metrics::MetricWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalFamily {
    Metrics,
    Logs,
    Traces,
    Intent,
    Env,
    Outcome,
}

impl fmt::Display for SignalFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SignalFamily::Metrics => "metrics",
            SignalFamily::Logs => "logs",
            SignalFamily::Traces => "traces",
            SignalFamily::Intent => "intent",
            SignalFamily::Env => "env",
            SignalFamily::Outcome => "outcome",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub span_id: String,
    pub step: u64,
    pub event: EventType,
    pub tool: Option<String>,
    pub text: String,
    pub canonical: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Available,
    Failed,
    Unknown,
}

/// A workflow-state key whose observed value differs from what the
/// environment reports as expected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateMismatch {
    pub key: String,
    pub observed: String,
    pub expected: String,
    pub artifact: Option<String>,
    pub service: Option<String>,
    pub tool: Option<String>,
    pub span_id: String,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolEnvState {
    pub step: u64,
    pub tool_status: BTreeMap<String, ToolStatus>,
    pub workflow_state: BTreeMap<String, String>,
    pub evaluator_signals: Vec<String>,
    pub mismatches: Vec<StateMismatch>,
    pub span_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Resolved,
    Unresolved,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeSignal {
    pub verdict: Verdict,
    pub failing_checks: Vec<String>,
    pub span_id: String,
    pub step: u64,
}

/// The six signal families of one run. Immutable once built, apart from
/// `metrics`, which the metrics stage fills in.
#[derive(Debug, Clone, Default)]
pub struct TelemetryBundle {
    pub metrics: Vec<MetricWindow>,
    pub logs: Vec<LogEntry>,
    pub traces: Vec<Span>,
    pub intent: Vec<IntentAnnotation>,
    pub env: Vec<ToolEnvState>,
    pub outcome: Option<Vec<OutcomeSignal>>,
    index: HashMap<String, usize>,
}

impl TelemetryBundle {
    pub fn span(&self, id: &str) -> Option<&Span> {
        self.index.get(id).map(|&i| &self.traces[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn max_step(&self) -> u64 {
        self.traces.last().map_or(0, |s| s.step)
    }

    pub fn spans_in(&self, start: u64, end: u64) -> impl Iterator<Item = &Span> {
        self.traces.iter().filter(move |s| s.step >= start && s.step <= end)
    }

    pub fn final_verdict(&self) -> Option<Verdict> {
        self.outcome.as_ref().and_then(|o| o.last()).map(|o| o.verdict)
    }

    pub fn intent_at(&self, step: u64) -> Option<&IntentAnnotation> {
        self.intent.iter().find(|a| a.step == step)
    }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn string_map(v: Option<&Value>) -> BTreeMap<String, String> {
    match v {
        Some(Value::Object(m)) => m
            .iter()
            .filter(|(k, _)| !k.trim().is_empty())
            .map(|(k, v)| (k.clone(), value_text(v)))
            .collect(),
        _ => BTreeMap::new(),
    }
}

fn string_list(v: Option<&Value>) -> Vec<String> {
    match v {
        Some(Value::Array(items)) => items.iter().map(value_text).filter(|s| !s.is_empty()).collect(),
        Some(Value::String(s)) => s
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect(),
        _ => Vec::new(),
    }
}

fn is_error_bearing(s: &Span) -> bool {
    if s.payload.trim().is_empty() {
        return false;
    }
    match s.event {
        EventType::RuntimeException => true,
        EventType::ToolReturn => s.status.is_failure(),
        EventType::SystemMessage => s.status.is_failure() && !s.is_bookkeeping(),
        _ => false,
    }
}

fn verdict_of(s: &Span) -> Verdict {
    match s.meta_str(meta::VERDICT) {
        Some("resolved") => Verdict::Resolved,
        Some("unresolved") => Verdict::Unresolved,
        Some(_) => Verdict::Unknown,
        None => match s.status {
            Status::Ok => Verdict::Resolved,
            Status::Error | Status::Timeout => Verdict::Unresolved,
            Status::Unknown => Verdict::Unknown,
        },
    }
}

fn env_record(step: u64, spans: &[Span]) -> Option<ToolEnvState> {
    let mut rec = ToolEnvState {
        step,
        tool_status: BTreeMap::new(),
        workflow_state: BTreeMap::new(),
        evaluator_signals: Vec::new(),
        mismatches: Vec::new(),
        span_ids: Vec::new(),
    };
    for s in spans {
        match s.event {
            EventType::ToolReturn => {
                if let Some(tool) = s.tool() {
                    let st = match s.status {
                        Status::Ok => ToolStatus::Available,
                        Status::Error | Status::Timeout => ToolStatus::Failed,
                        Status::Unknown => ToolStatus::Unknown,
                    };
                    rec.tool_status.insert(tool.to_string(), st);
                    rec.span_ids.push(s.span_id.clone());
                }
            }
            EventType::EnvObservation => {
                rec.span_ids.push(s.span_id.clone());
                let state = string_map(s.meta.get(meta::STATE));
                let expected = string_map(s.meta.get(meta::EXPECTED));
                for (key, want) in &expected {
                    let got = state.get(key).cloned().unwrap_or_else(|| "<absent>".into());
                    if &got != want {
                        rec.mismatches.push(StateMismatch {
                            key: key.clone(),
                            observed: got,
                            expected: want.clone(),
                            artifact: s.meta_str(meta::ARTIFACT).map(String::from),
                            service: s.meta_str(meta::SERVICE).map(String::from),
                            tool: s.tool().map(String::from),
                            span_id: s.span_id.clone(),
                            step,
                        });
                    }
                }
                rec.workflow_state.extend(state);
                if let Some(Value::Object(m)) = s.meta.get(meta::TOOL_STATUS) {
                    for (tool, v) in m {
                        let st = match v.as_str() {
                            Some("available") | Some("ok") => ToolStatus::Available,
                            Some("failed") | Some("error") => ToolStatus::Failed,
                            _ => ToolStatus::Unknown,
                        };
                        rec.tool_status.insert(tool.clone(), st);
                    }
                }
                if !s.payload.trim().is_empty() {
                    rec.evaluator_signals.push(s.payload.clone());
                }
            }
            _ => {}
        }
    }
    (!rec.span_ids.is_empty()).then_some(rec)
}

/// Partitions a trace into the six signal families.
///
/// With `strict`, spans must already be sorted by `(step, ts_ms)`; otherwise
/// they are stably sorted, so equal keys keep file order.
pub fn build_bundle(mut spans: Vec<Span>, strict: bool, intent_cfg: &IntentConfig) -> Result<TelemetryBundle, WireError> {
    if spans.is_empty() {
        return Err(WireError::Empty);
    }
    if let Some(w) = spans.windows(2).find(|w| (w[1].step, w[1].ts_ms) < (w[0].step, w[0].ts_ms)) {
        if strict {
            return Err(WireError::Ordering {
                span_id: w[1].span_id.clone(),
                step: w[1].step,
                ts_ms: w[1].ts_ms,
            });
        }
        spans.sort_by_key(|s| (s.step, s.ts_ms));
    }

    let mut bundle = TelemetryBundle::default();
    let mut outcome = Vec::new();
    let mut prior: Option<IntentAnnotation> = None;

    for chunk in spans.chunk_by(|a, b| a.step == b.step) {
        let step = chunk[0].step;
        let annotation = explicit_intent(chunk).unwrap_or_else(|| infer_intent(chunk, prior.as_ref(), intent_cfg));
        bundle.intent.push(annotation.clone());
        prior = Some(annotation);

        if let Some(env) = env_record(step, chunk) {
            bundle.env.push(env);
        }
        for s in chunk {
            if is_error_bearing(s) {
                bundle.logs.push(LogEntry {
                    span_id: s.span_id.clone(),
                    step,
                    event: s.event,
                    tool: s.tool().map(String::from),
                    text: s.payload.clone(),
                    canonical: canonicalize_error(&s.payload).map(|sig| sig.canonical).unwrap_or_default(),
                });
            }
            if s.event == EventType::OutcomeVerdict {
                outcome.push(OutcomeSignal {
                    verdict: verdict_of(s),
                    failing_checks: string_list(s.meta.get(meta::FAILING_CHECKS)),
                    span_id: s.span_id.clone(),
                    step,
                });
            }
        }
    }
    if !outcome.is_empty() {
        bundle.outcome = Some(outcome);
    }
    bundle.index = spans.iter().enumerate().map(|(i, s)| (s.span_id.clone(), i)).collect();
    bundle.traces = spans;
    Ok(bundle)
}
