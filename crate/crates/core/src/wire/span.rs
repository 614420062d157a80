use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::WireError;

/// Well-known `meta` keys. Anything else is carried through untouched.
pub mod meta {
    pub const TOOL: &str = "tool";
    pub const ARG_FP: &str = "arg_fp";
    pub const MODEL: &str = "model";
    pub const RETURN_CODE: &str = "return_code";
    pub const ERROR_CODE: &str = "error_code";
    pub const TOKENS: &str = "tokens";
    pub const PROMPT_TOKENS: &str = "prompt_tokens";
    pub const COMPLETION_TOKENS: &str = "completion_tokens";
    pub const CHECK: &str = "check";
    pub const VERDICT: &str = "verdict";
    pub const FAILING_CHECKS: &str = "failing_checks";
    pub const STATE: &str = "state";
    pub const EXPECTED: &str = "expected";
    pub const TOOL_STATUS: &str = "tool_status";
    pub const ARTIFACT: &str = "artifact";
    pub const SERVICE: &str = "service";
    pub const INTENT: &str = "intent";
    pub const ROLE: &str = "role";
    pub const CORRELATION_ID: &str = "correlation_id";
    pub const RUN_ID: &str = "run_id";
    pub const FINAL_STATUS: &str = "final_status";
    pub const DROPPED_EVENTS: &str = "dropped_events";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    ModelResponse,
    ToolCall,
    ToolReturn,
    VerifierResult,
    MetricSnapshot,
    RuntimeException,
    Submission,
    SystemMessage,
    EnvObservation,
    OutcomeVerdict,
}

impl EventType {
    pub const ALL: [EventType; 10] = [
        EventType::ModelResponse,
        EventType::ToolCall,
        EventType::ToolReturn,
        EventType::VerifierResult,
        EventType::MetricSnapshot,
        EventType::RuntimeException,
        EventType::Submission,
        EventType::SystemMessage,
        EventType::EnvObservation,
        EventType::OutcomeVerdict,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::ModelResponse => "model_response",
            EventType::ToolCall => "tool_call",
            EventType::ToolReturn => "tool_return",
            EventType::VerifierResult => "verifier_result",
            EventType::MetricSnapshot => "metric_snapshot",
            EventType::RuntimeException => "runtime_exception",
            EventType::Submission => "submission",
            EventType::SystemMessage => "system_message",
            EventType::EnvObservation => "env_observation",
            EventType::OutcomeVerdict => "outcome_verdict",
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
    Timeout,
    #[default]
    Unknown,
}

impl Status {
    pub fn is_failure(self) -> bool {
        matches!(self, Status::Error | Status::Timeout)
    }
}

/// One recorded execution unit.
///
/// Serialized as one JSON object per line with the fields in declaration
/// order. Fields this type does not know about land in `extra` and are
/// written back after the known ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpan")]
pub struct Span {
    pub span_id: String,
    pub parent_id: Option<String>,
    pub step: u64,
    pub ts_ms: u64,
    pub event: EventType,
    pub status: Status,
    pub payload: String,
    pub meta: BTreeMap<String, Value>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Deserialize)]
struct RawSpan {
    span_id: String,
    #[serde(default)]
    parent_id: Option<String>,
    step: i64,
    ts_ms: i64,
    event: EventType,
    status: Status,
    #[serde(default)]
    payload: String,
    #[serde(default)]
    meta: BTreeMap<String, Value>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

pub const TRUNCATION_MARKER: &str = "...[truncated]";

impl Span {
    pub fn new(span_id: impl Into<String>, step: u64, ts_ms: u64, event: EventType, status: Status) -> Self {
        Span {
            span_id: span_id.into(),
            parent_id: None,
            step,
            ts_ms,
            event,
            status,
            payload: String::new(),
            meta: BTreeMap::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn with_payload(mut self, payload: impl Into<String>) -> Self {
        self.payload = payload.into();
        self
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn with_parent(mut self, parent: impl Into<String>) -> Self {
        self.parent_id = Some(parent.into());
        self
    }

    pub fn meta_str(&self, key: &str) -> Option<&str> {
        self.meta.get(key).and_then(Value::as_str).filter(|s| !s.is_empty())
    }

    /// Numeric meta value; numeric strings are accepted too.
    pub fn meta_u64(&self, key: &str) -> Option<u64> {
        match self.meta.get(key)? {
            Value::Number(n) => n.as_u64().or_else(|| n.as_f64().filter(|f| *f >= 0.0).map(|f| f as u64)),
            Value::String(s) => s.trim().parse().ok(),
            _ => None,
        }
    }

    pub fn tool(&self) -> Option<&str> {
        self.meta_str(meta::TOOL)
    }

    pub fn role(&self) -> Option<&str> {
        self.meta_str(meta::ROLE)
    }

    /// Header and terminal records written by the recorder.
    pub fn is_bookkeeping(&self) -> bool {
        self.event == EventType::SystemMessage && matches!(self.role(), Some("header") | Some("terminal"))
    }

    /// Total tokens attributed to this span: `tokens` when present, else
    /// prompt plus completion.
    pub fn token_count(&self) -> u64 {
        self.meta_u64(meta::TOKENS).unwrap_or_else(|| {
            self.meta_u64(meta::PROMPT_TOKENS).unwrap_or(0) + self.meta_u64(meta::COMPLETION_TOKENS).unwrap_or(0)
        })
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("span serialization is infallible")
    }
}

/// Parses one trace line. Payloads longer than `payload_cap` bytes are cut
/// at a char boundary and suffixed with [`TRUNCATION_MARKER`].
pub fn parse_span_line_capped(line: &str, payload_cap: usize) -> Result<Span, WireError> {
    let raw: RawSpan = serde_json::from_str(line.trim()).map_err(|e| WireError::malformed(e.to_string()))?;
    let mut span = Span::try_from(raw).map_err(WireError::malformed)?;
    if span.payload.len() > payload_cap {
        let mut cut = payload_cap;
        while !span.payload.is_char_boundary(cut) {
            cut -= 1;
        }
        span.payload.truncate(cut);
        span.payload.push_str(TRUNCATION_MARKER);
    }
    Ok(span)
}

impl TryFrom<RawSpan> for Span {
    type Error = String;

    fn try_from(raw: RawSpan) -> Result<Self, Self::Error> {
        if raw.span_id.is_empty() {
            return Err("empty span_id".into());
        }
        if raw.step < 0 {
            return Err(format!("negative step {}", raw.step));
        }
        if raw.ts_ms < 0 {
            return Err(format!("negative ts_ms {}", raw.ts_ms));
        }
        Ok(Span {
            span_id: raw.span_id,
            parent_id: raw.parent_id,
            step: raw.step as u64,
            ts_ms: raw.ts_ms as u64,
            event: raw.event,
            status: raw.status,
            payload: raw.payload,
            meta: raw.meta,
            extra: raw.extra,
        })
    }
}

pub fn parse_span_line(line: &str) -> Result<Span, WireError> {
    parse_span_line_capped(line, crate::config::DEFAULT_PAYLOAD_CAP)
}
