//! Trace text in, report out.

use thiserror::Error;

use crate::config::Config;
use crate::diagnose::{run_diagnosis, run_id_of, task_of, DiagnoseError, DiagnosisBackend};
use crate::fuse::{fuse, normalize_finding};
use crate::gate::{format_hint, run_gate, GateError};
use crate::localize::localize_all;
use crate::metrics::{compute_windows, MetricsError};
use crate::report::{Report, RunMetadata, PIPELINE_VERSION, SCHEMA_VERSION};
use crate::wire::{build_bundle, read_trace, WireError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("wire: {0}")]
    Parse(#[source] WireError),
    #[error("bundle: {0}")]
    Bundle(#[source] WireError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("diagnose: {0}")]
    Diagnose(#[from] DiagnoseError),
    #[error("gate: {0}")]
    Gate(#[from] GateError),
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Parse(_) => "wire",
            PipelineError::Bundle(_) => "bundle",
            PipelineError::Metrics(_) => "metrics",
            PipelineError::Diagnose(_) => "diagnose",
            PipelineError::Gate(_) => "gate",
        }
    }

    /// Whether the input itself could not be read as a trace.
    pub fn is_parse_failure(&self) -> bool {
        matches!(self, PipelineError::Parse(_))
    }
}

/// Runs wire, metrics, localize, fuse, diagnose and gate over one trace. The
/// result is a pure function of the inputs; `generated_at_ms` is left unset.
pub fn run_pipeline(
    text: &str,
    source: &str,
    cfg: &Config,
    backend: Option<&dyn DiagnosisBackend>,
) -> Result<Report, PipelineError> {
    let read = read_trace(text, &cfg.wire).map_err(PipelineError::Parse)?;
    let mut bundle = build_bundle(read.spans, cfg.wire.strict_order, &cfg.intent).map_err(PipelineError::Bundle)?;
    let windows = compute_windows(&bundle, &cfg.metrics)?;
    bundle.metrics = windows.clone();

    let findings = localize_all(&bundle, &windows, &cfg.localize);
    let units: Vec<_> = findings.iter().map(normalize_finding).collect();
    let records = fuse(&units);

    let run = run_diagnosis(&records, &bundle, &cfg.diagnose, backend)?;
    let gate = run_gate(&run.diagnosis, &records, &cfg.gate);
    let hint = format_hint(&gate.guidance, &records, cfg.gate.budget_tokens)?;

    Ok(Report {
        schema_version: SCHEMA_VERSION,
        pipeline_version: PIPELINE_VERSION.to_string(),
        run: RunMetadata {
            run_id: run_id_of(&bundle),
            task: task_of(&bundle),
            source: source.to_string(),
            span_count: bundle.traces.len(),
            step_count: bundle.intent.len(),
            final_verdict: bundle.final_verdict(),
            skipped_lines: read.skipped,
            generated_at_ms: None,
        },
        spans: bundle.traces,
        windows,
        findings,
        records,
        diagnosis: run.diagnosis,
        fallback_reason: run.fallback_reason,
        gate,
        hint,
        config: cfg.clone(),
    })
}
