//! Recovery-oriented metric groups computed over sliding step windows.
//!
//! Formulas, per window of `steps = end - start + 1` steps:
//!
//! | metric | value |
//! |---|---|
//! | `token_velocity` | tokens in window / `window_len` |
//! | `context_saturation` | max prompt tokens / context limit, clipped to [0,1] |
//! | `tool_call_density` | tool calls / steps, clipped to [0,1] |
//! | `retry_dominance` | calls repeating an earlier failed (tool, fingerprint) / calls |
//! | `recovery_progress` | steps whose workflow state changed (intent changes when no state is recorded) |
//! | `progress_cost_coupling` | progress / max(1, tokens / 1000) |
//! | `intent_volatility` | label changes / (labelled steps - 1) |
//! | `intent_run_length_ratio` | mean run length of equal labels / labelled steps |
//! | `tool_switch_volatility` | tool-name changes / max(1, calls - 1) |

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::MetricsConfig;
use crate::wire::{meta, EventType, IntentLabel, Span, TelemetryBundle};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid metrics config: {0}")]
    InvalidConfig(String),
    #[error("unknown metric '{0}'")]
    UnknownMetric(String),
}

pub const METRIC_NAMES: [&str; 9] = [
    "token_velocity",
    "context_saturation",
    "tool_call_density",
    "retry_dominance",
    "recovery_progress",
    "progress_cost_coupling",
    "intent_volatility",
    "intent_run_length_ratio",
    "tool_switch_volatility",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub token_velocity: f64,
    pub context_saturation: f64,
    pub tool_call_density: f64,
    pub retry_dominance: f64,
    pub recovery_progress: f64,
    pub progress_cost_coupling: f64,
    pub intent_volatility: f64,
    pub intent_run_length_ratio: f64,
    pub tool_switch_volatility: f64,
}

impl MetricVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "token_velocity" => self.token_velocity,
            "context_saturation" => self.context_saturation,
            "tool_call_density" => self.tool_call_density,
            "retry_dominance" => self.retry_dominance,
            "recovery_progress" => self.recovery_progress,
            "progress_cost_coupling" => self.progress_cost_coupling,
            "intent_volatility" => self.intent_volatility,
            "intent_run_length_ratio" => self.intent_run_length_ratio,
            "tool_switch_volatility" => self.tool_switch_volatility,
            _ => return None,
        })
    }

    /// Values in [`METRIC_NAMES`] order.
    pub fn to_array(&self) -> [f64; 9] {
        METRIC_NAMES.map(|n| self.get(n).expect("known metric"))
    }

    pub fn from_array(v: [f64; 9]) -> Self {
        MetricVector {
            token_velocity: v[0],
            context_saturation: v[1],
            tool_call_density: v[2],
            retry_dominance: v[3],
            recovery_progress: v[4],
            progress_cost_coupling: v[5],
            intent_volatility: v[6],
            intent_run_length_ratio: v[7],
            tool_switch_volatility: v[8],
        }
    }
}

/// Metrics whose natural range is [0,1].
pub fn is_unit_bounded(name: &str) -> bool {
    matches!(
        name,
        "context_saturation"
            | "tool_call_density"
            | "retry_dominance"
            | "intent_volatility"
            | "intent_run_length_ratio"
            | "tool_switch_volatility"
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricWindow {
    pub start_step: u64,
    pub end_step: u64,
    pub vector: MetricVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub metric_name: String,
    /// ((start_step, end_step), value) in window order.
    pub values: Vec<((u64, u64), f64)>,
}

impl MetricSeries {
    pub fn raw(&self) -> Vec<f64> {
        self.values.iter().map(|(_, v)| *v).collect()
    }
}

/// Argument fingerprint of a tool call: `meta.arg_fp` when present, else a
/// hash of the whitespace-collapsed payload.
pub fn arg_fingerprint(span: &Span) -> String {
    span.meta_str(meta::ARG_FP)
        .map(String::from)
        .unwrap_or_else(|| crate::util::stable_hash(&crate::util::collapse_whitespace(&span.payload)))
}

/// Indices (into `traces`) of tool calls that failed: either the call span
/// itself carries a failure status or the next return for the same tool does.
pub fn failed_call_indices(traces: &[Span]) -> HashSet<usize> {
    let mut failed = HashSet::new();
    let mut pending: HashMap<&str, VecDeque<usize>> = HashMap::new();
    for (i, s) in traces.iter().enumerate() {
        match s.event {
            EventType::ToolCall => {
                if s.status.is_failure() {
                    failed.insert(i);
                }
                pending.entry(s.tool().unwrap_or("")).or_default().push_back(i);
            }
            EventType::ToolReturn => {
                if let Some(call) = pending.get_mut(s.tool().unwrap_or("")).and_then(VecDeque::pop_front) {
                    if s.status.is_failure() {
                        failed.insert(call);
                    }
                }
            }
            _ => {}
        }
    }
    failed
}

/// Window ranges tiling `[0, max_step]`.
fn window_ranges(max_step: u64, len: u64, stride: u64) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = start + len - 1;
        out.push((start, end.min(max_step)));
        if end >= max_step {
            break;
        }
        start += stride;
    }
    out
}

struct RunFacts {
    /// Per tool-call index: does it repeat an earlier failed (tool, fp)?
    retry: HashMap<usize, bool>,
    /// Steps whose recorded workflow state differs from the previous record.
    state_changes: HashSet<u64>,
    has_workflow_state: bool,
}

fn run_facts(bundle: &TelemetryBundle) -> RunFacts {
    let failed = failed_call_indices(&bundle.traces);
    let mut failed_keys: HashSet<(String, String)> = HashSet::new();
    let mut retry = HashMap::new();
    for (i, s) in bundle.traces.iter().enumerate() {
        if s.event != EventType::ToolCall {
            continue;
        }
        let key = (s.tool().unwrap_or("").to_string(), arg_fingerprint(s));
        retry.insert(i, failed_keys.contains(&key));
        if failed.contains(&i) {
            failed_keys.insert(key);
        }
    }

    let mut state_changes = HashSet::new();
    let mut previous: BTreeMap<String, String> = BTreeMap::new();
    let mut has_workflow_state = false;
    for rec in &bundle.env {
        if rec.workflow_state.is_empty() {
            continue;
        }
        has_workflow_state = true;
        if rec.workflow_state != previous {
            state_changes.insert(rec.step);
        }
        previous = rec.workflow_state.clone();
    }
    RunFacts {
        retry,
        state_changes,
        has_workflow_state,
    }
}

fn label_changes(labels: &[IntentLabel]) -> usize {
    labels.windows(2).filter(|w| w[0] != w[1]).count()
}

fn window_vector(bundle: &TelemetryBundle, facts: &RunFacts, range: (u64, u64), cfg: &MetricsConfig) -> MetricVector {
    let (start, end) = range;
    let steps = (end - start + 1) as f64;

    let mut tokens = 0u64;
    let mut max_prompt = 0u64;
    let mut calls = 0usize;
    let mut retries = 0usize;
    let mut tools: Vec<&str> = Vec::new();
    for (i, s) in bundle.traces.iter().enumerate() {
        if s.step < start || s.step > end {
            continue;
        }
        tokens += s.token_count();
        max_prompt = max_prompt.max(s.meta_u64(meta::PROMPT_TOKENS).unwrap_or(0));
        if s.event == EventType::ToolCall {
            calls += 1;
            if facts.retry.get(&i).copied().unwrap_or(false) {
                retries += 1;
            }
            tools.push(s.tool().unwrap_or(""));
        }
    }

    let labels: Vec<IntentLabel> = bundle
        .intent
        .iter()
        .filter(|a| a.step >= start && a.step <= end)
        .map(|a| a.label)
        .collect();
    let changes = label_changes(&labels);

    let progress = if facts.has_workflow_state {
        facts.state_changes.iter().filter(|&&s| s >= start && s <= end).count() as f64
    } else {
        changes as f64
    };

    let intent_volatility = if labels.len() > 1 {
        changes as f64 / (labels.len() - 1) as f64
    } else {
        0.0
    };
    let intent_run_length_ratio = if labels.is_empty() {
        0.0
    } else {
        let runs = changes + 1;
        (labels.len() as f64 / runs as f64) / labels.len() as f64
    };
    let switches = tools.windows(2).filter(|w| w[0] != w[1]).count();

    MetricVector {
        token_velocity: tokens as f64 / cfg.window_len as f64,
        context_saturation: (max_prompt as f64 / cfg.context_limit as f64).clamp(0.0, 1.0),
        tool_call_density: (calls as f64 / steps).min(1.0),
        retry_dominance: if calls == 0 { 0.0 } else { retries as f64 / calls as f64 },
        recovery_progress: progress,
        progress_cost_coupling: progress / (tokens as f64 / 1000.0).max(1.0),
        intent_volatility,
        intent_run_length_ratio,
        tool_switch_volatility: switches as f64 / (calls.saturating_sub(1)).max(1) as f64,
    }
}

pub fn compute_windows(bundle: &TelemetryBundle, cfg: &MetricsConfig) -> Result<Vec<MetricWindow>, MetricsError> {
    if cfg.window_len < 2 {
        return Err(MetricsError::InvalidConfig(format!("window_len {} < 2", cfg.window_len)));
    }
    if cfg.stride < 1 {
        return Err(MetricsError::InvalidConfig("stride < 1".into()));
    }
    if cfg.context_limit == 0 {
        return Err(MetricsError::InvalidConfig("context_limit is zero".into()));
    }
    let facts = run_facts(bundle);
    Ok(window_ranges(bundle.max_step(), cfg.window_len, cfg.stride)
        .into_iter()
        .map(|range| MetricWindow {
            start_step: range.0,
            end_step: range.1,
            vector: window_vector(bundle, &facts, range, cfg),
        })
        .collect())
}

pub fn series_of(windows: &[MetricWindow], metric_name: &str) -> Result<MetricSeries, MetricsError> {
    if !METRIC_NAMES.contains(&metric_name) {
        return Err(MetricsError::UnknownMetric(metric_name.to_string()));
    }
    Ok(MetricSeries {
        metric_name: metric_name.to_string(),
        values: windows
            .iter()
            .map(|w| ((w.start_step, w.end_step), w.vector.get(metric_name).expect("known metric")))
            .collect(),
    })
}
