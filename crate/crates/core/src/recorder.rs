//! In-process session recorder that writes wire-format spans as an agent
//! runs. After `start_session` succeeds nothing here returns an error to the
//! caller: failed writes and events on closed sessions are counted instead.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::util::stable_hash;
use crate::wire::{meta, EventType, Span, Status};

#[derive(Debug, Error)]
pub enum RecorderError {
    #[error("trace sink {path} is not writable: {source}")]
    SinkUnwritable { path: String, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalStatus {
    Resolved,
    Unresolved,
    Error,
    Aborted,
}

impl FinalStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FinalStatus::Resolved => "resolved",
            FinalStatus::Unresolved => "unresolved",
            FinalStatus::Error => "error",
            FinalStatus::Aborted => "aborted",
        }
    }
}

/// Where a finalized trace lives, for handing over to the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRef {
    pub run_id: String,
    pub path: Option<PathBuf>,
    pub lines_written: u64,
    pub dropped_events: u64,
}

/// One boundary event: an event kind plus optional status, payload, meta and
/// parent span.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEvent {
    pub kind: EventType,
    pub status: Status,
    pub payload: String,
    pub meta: BTreeMap<String, Value>,
    pub parent_id: Option<String>,
}

impl BoundaryEvent {
    pub fn new(kind: EventType) -> Self {
        BoundaryEvent {
            kind,
            status: Status::Ok,
            payload: String::new(),
            meta: BTreeMap::new(),
            parent_id: None,
        }
    }

    pub fn status(mut self, status: Status) -> Self {
        self.status = status;
        self
    }

    pub fn payload(mut self, payload: impl Into<String>) -> Self {
        self.payload = payload.into();
        self
    }

    pub fn meta(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn parent(mut self, parent: impl Into<String>) -> Self {
        self.parent_id = Some(parent.into());
        self
    }
}

pub type Clock = Box<dyn Fn() -> u64 + Send + Sync>;

#[derive(Default)]
pub struct SessionOptions {
    /// Fixed run id; generated when absent.
    pub run_id: Option<String>,
    /// Milliseconds source; wall clock when absent.
    pub clock: Option<Clock>,
}

/// In-memory sink whose contents stay readable after the session ends.
#[derive(Debug, Clone, Default)]
pub struct MemorySink(Arc<Mutex<Vec<u8>>>);

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contents(&self) -> String {
        let buf = self.0.lock().unwrap_or_else(|e| e.into_inner());
        String::from_utf8_lossy(&buf).into_owned()
    }
}

impl Write for MemorySink {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).extend_from_slice(data);
        Ok(data.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

struct Inner {
    sink: Box<dyn Write + Send>,
    clock: Clock,
    run_id: String,
    path: Option<PathBuf>,
    next_span: u64,
    step: u64,
    step_used: bool,
    explicit_steps: bool,
    last_ts: u64,
    lines_written: u64,
    dropped: u64,
    open: bool,
    trace_ref: Option<TraceRef>,
}

impl Inner {
    fn now(&mut self) -> u64 {
        self.last_ts = (self.clock)().max(self.last_ts);
        self.last_ts
    }

    fn next_id(&mut self) -> String {
        let id = format!("span-{:06}", self.next_span);
        self.next_span += 1;
        id
    }

    fn write_span(&mut self, span: &Span) -> bool {
        let line = span.to_line() + "\n";
        let ok = self.sink.write_all(line.as_bytes()).and_then(|_| self.sink.flush()).is_ok();
        if ok {
            self.lines_written += 1;
        }
        ok
    }
}

/// Shared handle to one recording session. Clones refer to the same session.
#[derive(Clone)]
pub struct SessionHandle {
    inner: Arc<Mutex<Inner>>,
    run_id: String,
    started_at: u64,
}

impl std::fmt::Debug for SessionHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionHandle")
            .field("run_id", &self.run_id)
            .field("started_at", &self.started_at)
            .field("open", &self.is_open())
            .finish()
    }
}

fn wall_clock_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

static SESSION_SEQ: AtomicU64 = AtomicU64::new(0);

fn fresh_run_id(started_at: u64) -> String {
    let seq = SESSION_SEQ.fetch_add(1, Ordering::Relaxed);
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    format!(
        "run-{}",
        &stable_hash(&format!("{}:{seq}:{nanos}:{started_at}", std::process::id()))[..12]
    )
}

/// Opens a file-backed session and writes the run header.
pub fn start_session(path: &Path, run_meta: &BTreeMap<String, String>) -> Result<SessionHandle, RecorderError> {
    let unwritable = |source| RecorderError::SinkUnwritable {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(unwritable)?;
    start_session_with(Box::new(file), Some(path.to_path_buf()), run_meta, SessionOptions::default())
        .map_err(|e| match e {
            RecorderError::SinkUnwritable { source, .. } => unwritable(source),
        })
}

/// Opens a session on any writer. The header write is the only write whose
/// failure is reported.
pub fn start_session_with(
    sink: Box<dyn Write + Send>,
    path: Option<PathBuf>,
    run_meta: &BTreeMap<String, String>,
    options: SessionOptions,
) -> Result<SessionHandle, RecorderError> {
    let clock = options.clock.unwrap_or_else(|| Box::new(wall_clock_ms));
    let started_at = clock();
    let run_id = options.run_id.unwrap_or_else(|| fresh_run_id(started_at));
    let mut inner = Inner {
        sink,
        clock,
        run_id: run_id.clone(),
        path,
        next_span: 0,
        step: 0,
        step_used: false,
        explicit_steps: false,
        last_ts: started_at,
        lines_written: 0,
        dropped: 0,
        open: true,
        trace_ref: None,
    };
    let id = inner.next_id();
    let mut header = Span::new(id, 0, started_at, EventType::SystemMessage, Status::Ok)
        .with_meta(meta::ROLE, "header")
        .with_meta(meta::RUN_ID, run_id.as_str());
    for (k, v) in run_meta {
        if k != meta::ROLE && k != meta::RUN_ID {
            header = header.with_meta(k, v.as_str());
        }
    }
    let line = header.to_line() + "\n";
    inner
        .sink
        .write_all(line.as_bytes())
        .and_then(|_| inner.sink.flush())
        .map_err(|source| RecorderError::SinkUnwritable {
            path: inner.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            source,
        })?;
    inner.lines_written = 1;
    Ok(SessionHandle {
        inner: Arc::new(Mutex::new(inner)),
        run_id,
        started_at,
    })
}

impl SessionHandle {
    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn started_at(&self) -> u64 {
        self.started_at
    }

    pub fn is_open(&self) -> bool {
        self.lock().open
    }

    pub fn dropped_events(&self) -> u64 {
        self.lock().dropped
    }

    pub fn current_step(&self) -> u64 {
        self.lock().step
    }

    /// Starts a new agent step. Once called, model responses no longer open
    /// steps on their own.
    pub fn mark_step(&self) {
        let mut inner = self.lock();
        inner.explicit_steps = true;
        if inner.step_used {
            inner.step += 1;
            inner.step_used = false;
        }
    }

    /// Appends one span. Returns its id, or `None` when the event was
    /// dropped.
    pub fn record_event(&self, event: BoundaryEvent) -> Option<String> {
        let mut inner = self.lock();
        if !inner.open {
            inner.dropped += 1;
            return None;
        }
        if event.kind == EventType::ModelResponse && !inner.explicit_steps && inner.step_used {
            inner.step += 1;
        }
        inner.step_used = true;
        let id = inner.next_id();
        let ts = inner.now();
        let mut span = Span::new(id.clone(), inner.step, ts, event.kind, event.status).with_payload(event.payload);
        span.meta = event.meta;
        span.parent_id = event.parent_id;
        if inner.write_span(&span) {
            Some(id)
        } else {
            inner.dropped += 1;
            None
        }
    }

    /// Writes the terminal record and closes the session. Later calls return
    /// the same reference without writing.
    pub fn finalize_session(&self, final_status: FinalStatus) -> TraceRef {
        let mut inner = self.lock();
        if let Some(r) = &inner.trace_ref {
            return r.clone();
        }
        inner.open = false;
        let id = inner.next_id();
        let ts = inner.now();
        let status = match final_status {
            FinalStatus::Resolved => Status::Ok,
            _ => Status::Error,
        };
        let terminal = Span::new(id, inner.step, ts, EventType::SystemMessage, status)
            .with_meta(meta::ROLE, "terminal")
            .with_meta(meta::RUN_ID, inner.run_id.as_str())
            .with_meta(meta::FINAL_STATUS, final_status.as_str())
            .with_meta(meta::DROPPED_EVENTS, inner.dropped);
        if !inner.write_span(&terminal) {
            inner.dropped += 1;
        }
        let r = TraceRef {
            run_id: inner.run_id.clone(),
            path: inner.path.clone(),
            lines_written: inner.lines_written,
            dropped_events: inner.dropped,
        };
        inner.trace_ref = Some(r.clone());
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Broken;

    impl Write for Broken {
        fn write(&mut self, _: &[u8]) -> io::Result<usize> {
            Err(io::Error::other("disk gone"))
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    fn fixed_clock() -> SessionOptions {
        SessionOptions {
            run_id: Some("run-test".into()),
            clock: Some(Box::new(|| 1000)),
        }
    }

    fn memory_session() -> (SessionHandle, MemorySink) {
        let sink = MemorySink::new();
        let h = start_session_with(Box::new(sink.clone()), None, &BTreeMap::new(), fixed_clock()).unwrap();
        (h, sink)
    }

    #[test]
    fn header_written_on_start() {
        let (h, sink) = memory_session();
        assert!(h.is_open());
        assert_eq!(sink.contents().lines().count(), 1);
        assert!(sink.contents().contains("\"role\":\"header\""));
    }

    #[test]
    fn unwritable_header_is_an_error() {
        let r = start_session_with(Box::new(Broken), None, &BTreeMap::new(), SessionOptions::default());
        assert!(matches!(r, Err(RecorderError::SinkUnwritable { .. })));
    }

    #[test]
    fn model_responses_open_steps() {
        let (h, _) = memory_session();
        h.record_event(BoundaryEvent::new(EventType::ModelResponse));
        h.record_event(BoundaryEvent::new(EventType::ToolCall));
        assert_eq!(h.current_step(), 0);
        h.record_event(BoundaryEvent::new(EventType::ModelResponse));
        assert_eq!(h.current_step(), 1);
    }

    #[test]
    fn explicit_marks_take_over() {
        let (h, _) = memory_session();
        h.record_event(BoundaryEvent::new(EventType::ModelResponse));
        h.mark_step();
        h.record_event(BoundaryEvent::new(EventType::ModelResponse));
        h.record_event(BoundaryEvent::new(EventType::ModelResponse));
        assert_eq!(h.current_step(), 1);
    }

    #[test]
    fn events_after_finalize_are_dropped() {
        let (h, sink) = memory_session();
        let r1 = h.finalize_session(FinalStatus::Unresolved);
        assert_eq!(h.record_event(BoundaryEvent::new(EventType::ToolCall)), None);
        assert_eq!(h.dropped_events(), 1);
        let r2 = h.finalize_session(FinalStatus::Resolved);
        assert_eq!(r1, r2);
        assert_eq!(sink.contents().lines().count(), 2);
        assert!(!h.is_open());
    }

    #[test]
    fn distinct_run_ids() {
        let a = start_session_with(Box::new(MemorySink::new()), None, &BTreeMap::new(), SessionOptions::default()).unwrap();
        let b = start_session_with(Box::new(MemorySink::new()), None, &BTreeMap::new(), SessionOptions::default()).unwrap();
        assert_ne!(a.run_id(), b.run_id());
    }
}
