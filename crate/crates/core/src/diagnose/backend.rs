use std::fs;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{build_context, fallback_diagnose, validate_diagnosis, DiagnoseError, DiagnosisContext, StructuredDiagnosis};
use crate::config::{BackendConfig, DiagnoseConfig};
use crate::fuse::FusedEvidenceRecord;
use crate::wire::TelemetryBundle;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend io: {0}")]
    Io(#[from] std::io::Error),
    #[error("backend exited with {0}")]
    Exit(String),
    #[error("backend timed out after {0} ms")]
    Timeout(u64),
    #[error("backend output is not JSON: {0}")]
    Output(String),
}

/// A single call from context to a raw, unvalidated diagnosis object.
pub trait DiagnosisBackend: Send + Sync {
    fn diagnose(&self, ctx: &DiagnosisContext) -> Result<Value, BackendError>;
}

/// Runs `program args... <context.json> <diagnosis.json>` and reads the
/// diagnosis file back once the process exits.
#[derive(Debug, Clone)]
pub struct CommandBackend {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl CommandBackend {
    pub fn from_config(cfg: &BackendConfig) -> Option<Self> {
        match cfg {
            BackendConfig::Fallback => None,
            BackendConfig::Command {
                program,
                args,
                timeout_ms,
            } => Some(CommandBackend {
                program: program.clone(),
                args: args.clone(),
                timeout: Duration::from_millis(*timeout_ms),
            }),
        }
    }
}

static EXCHANGE_SEQ: AtomicU64 = AtomicU64::new(0);

struct Exchange {
    context: PathBuf,
    output: PathBuf,
}

impl Exchange {
    fn new() -> Self {
        let n = EXCHANGE_SEQ.fetch_add(1, Ordering::Relaxed);
        let base = std::env::temp_dir().join(format!("failscope-{}-{n}", std::process::id()));
        Exchange {
            context: base.with_extension("context.json"),
            output: base.with_extension("diagnosis.json"),
        }
    }
}

impl Drop for Exchange {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.context);
        let _ = fs::remove_file(&self.output);
    }
}

impl DiagnosisBackend for CommandBackend {
    fn diagnose(&self, ctx: &DiagnosisContext) -> Result<Value, BackendError> {
        let ex = Exchange::new();
        let body = serde_json::to_string_pretty(ctx).map_err(|e| BackendError::Output(e.to_string()))?;
        fs::write(&ex.context, body)?;

        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg(&ex.context)
            .arg(&ex.output)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()?;
        let started = Instant::now();
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if started.elapsed() >= self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(BackendError::Timeout(self.timeout.as_millis() as u64));
            }
            thread::sleep(Duration::from_millis(10));
        };
        if !status.success() {
            return Err(BackendError::Exit(status.to_string()));
        }
        let text = fs::read_to_string(&ex.output)?;
        serde_json::from_str(&text).map_err(|e| BackendError::Output(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisRun {
    pub diagnosis: StructuredDiagnosis,
    /// Why the backend result was not used, when a backend was configured.
    pub fallback_reason: Option<String>,
}

/// At most one backend call; any backend or validation failure falls back to
/// the deterministic summarizer.
pub fn run_diagnosis(
    records: &[FusedEvidenceRecord],
    bundle: &TelemetryBundle,
    cfg: &DiagnoseConfig,
    backend: Option<&dyn DiagnosisBackend>,
) -> Result<DiagnosisRun, DiagnoseError> {
    let mut fallback_reason = None;
    if let Some(backend) = backend {
        let ctx = build_context(records, bundle, cfg.top_k);
        let attempt = backend
            .diagnose(&ctx)
            .map_err(|e| e.to_string())
            .and_then(|raw| validate_diagnosis(&raw, &ctx.records, cfg).map_err(|e| e.to_string()));
        match attempt {
            Ok(diagnosis) => {
                return Ok(DiagnosisRun {
                    diagnosis,
                    fallback_reason: None,
                })
            }
            Err(reason) => fallback_reason = Some(reason),
        }
    }
    Ok(DiagnosisRun {
        diagnosis: fallback_diagnose(records, bundle, cfg)?,
        fallback_reason,
    })
}
