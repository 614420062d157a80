//! Seeded generators of failed runs, one per failure-cause category. Runs are
//! written through the recorder so they exercise the same path as live
//! instrumentation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuse::FusedEvidenceRecord;
use crate::localize::{AnchorCategory, FindingKind, InfraClass};
use crate::recorder::{start_session_with, BoundaryEvent, FinalStatus, MemorySink, SessionHandle, SessionOptions};
use crate::util::stable_hash;
use crate::wire::{meta, EventType, Status};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SynthError {
    #[error("unknown category '{0}'")]
    UnknownCategory(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    InsufficientValidation,
    RetryNoProgress,
    RuntimeEnvironment,
    StateWorkflow,
    ToolSubprocess,
    PatchSubmission,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::InsufficientValidation,
        Category::RetryNoProgress,
        Category::RuntimeEnvironment,
        Category::StateWorkflow,
        Category::ToolSubprocess,
        Category::PatchSubmission,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::InsufficientValidation => "insufficient_validation",
            Category::RetryNoProgress => "retry_no_progress",
            Category::RuntimeEnvironment => "runtime_environment",
            Category::StateWorkflow => "state_workflow",
            Category::ToolSubprocess => "tool_subprocess",
            Category::PatchSubmission => "patch_submission",
        }
    }

    /// Whether a diagnosis anchored on `record` points at this category's
    /// seeded pattern.
    pub fn anchors_on_pattern(self, record: &FusedEvidenceRecord) -> bool {
        let lead = record.lead();
        let cat = record.anchor.category;
        match self {
            Category::InsufficientValidation => {
                lead.origin_kind == FindingKind::OutcomeMismatch
                    && matches!(cat, AnchorCategory::Check | AnchorCategory::Outcome | AnchorCategory::Claim)
            }
            Category::RetryNoProgress => cat == AnchorCategory::ArgumentFingerprint,
            Category::RuntimeEnvironment => {
                matches!(cat, AnchorCategory::ErrorSignature | AnchorCategory::Infrastructure)
                    && lead.infra_class.is_some_and(|c| c != InfraClass::None)
            }
            Category::StateWorkflow => cat == AnchorCategory::State,
            Category::ToolSubprocess => {
                cat == AnchorCategory::ErrorSignature && lead.origin_kind == FindingKind::ExecutionError
            }
            Category::PatchSubmission => {
                cat == AnchorCategory::ErrorSignature && lead.tool.as_deref() == Some("submit")
            }
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_lowercase().replace('-', "_");
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == norm)
            .ok_or_else(|| SynthError::UnknownCategory(s.to_string()))
    }
}

const SYNTH_EPOCH_MS: u64 = 1_700_000_000_000;

const FILES: [&str; 8] = [
    "src/parser.py",
    "src/config.py",
    "src/api/handlers.py",
    "src/utils.py",
    "tests/test_parser.py",
    "tests/test_api.py",
    "setup.cfg",
    "README.md",
];

const CHECKS: [&str; 5] = ["test_parser", "test_api", "test_roundtrip", "integration", "lint"];

struct Run {
    h: SessionHandle,
    rng: ChaCha8Rng,
    clock: Arc<AtomicU64>,
}

impl Run {
    fn tick(&mut self) {
        let dt = self.rng.gen_range(40..900);
        self.clock.fetch_add(dt, Ordering::Relaxed);
    }

    fn record(&mut self, ev: BoundaryEvent) -> String {
        self.tick();
        self.h.record_event(ev).unwrap_or_default()
    }

    fn think(&mut self, text: &str) {
        let prompt: u64 = self.rng.gen_range(800..4000);
        let completion: u64 = self.rng.gen_range(40..400);
        self.record(
            BoundaryEvent::new(EventType::ModelResponse)
                .payload(text)
                .meta(meta::MODEL, "agent-model")
                .meta(meta::PROMPT_TOKENS, prompt)
                .meta(meta::COMPLETION_TOKENS, completion),
        );
    }

    fn tool(&mut self, tool: &str, args: &str, status: Status, output: &str) -> String {
        let call = self.record(
            BoundaryEvent::new(EventType::ToolCall)
                .payload(args)
                .meta(meta::TOOL, tool)
                .meta(meta::ARG_FP, &stable_hash(&format!("{tool} {args}"))[..8]),
        );
        let rc = if status == Status::Ok { 0 } else { 1 };
        self.record(
            BoundaryEvent::new(EventType::ToolReturn)
                .status(status)
                .payload(output)
                .meta(meta::TOOL, tool)
                .meta(meta::RETURN_CODE, rc),
        );
        call
    }

    fn explore(&mut self, steps: usize) {
        for _ in 0..steps {
            let file = *FILES.choose(&mut self.rng).expect("non-empty");
            self.think(&format!("Let me look at {file}."));
            match self.rng.gen_range(0..3) {
                0 => self.tool("read_file", file, Status::Ok, "def parse(text):\n    return text.split()"),
                1 => self.tool("grep", &format!("-n parse {file}"), Status::Ok, "12: def parse(text):"),
                _ => self.tool("ls", "src", Status::Ok, "api config.py parser.py utils.py"),
            };
        }
    }

    fn edit(&mut self) {
        let file = *FILES[..4].choose(&mut self.rng).expect("non-empty");
        self.think(&format!("I'll update {file}."));
        let n: u32 = self.rng.gen_range(1..200);
        self.tool("edit_file", &format!("{file} @@ -{n},3 +{n},4 @@"), Status::Ok, "edit applied");
    }

    fn verify(&mut self, check: &str, ok: bool) {
        self.think("Running the tests.");
        let (status, text) = if ok {
            (Status::Ok, "passed")
        } else {
            (Status::Error, "1 failed")
        };
        self.record(
            BoundaryEvent::new(EventType::VerifierResult)
                .status(status)
                .payload(format!("{check}: {text}"))
                .meta(meta::CHECK, check),
        );
    }

    fn submit(&mut self, patch: &str, status: Status, output: &str) {
        self.think("Submitting the patch.");
        self.record(
            BoundaryEvent::new(EventType::Submission)
                .status(status)
                .payload(if output.is_empty() { patch.to_string() } else { output.to_string() })
                .meta(meta::ARTIFACT, "patch.diff")
                .meta("patch_fp", &stable_hash(patch)[..8]),
        );
    }

    fn verdict(&mut self, checks: &[&str]) {
        self.record(
            BoundaryEvent::new(EventType::OutcomeVerdict)
                .status(Status::Error)
                .payload("evaluator: unresolved")
                .meta(meta::VERDICT, "unresolved")
                .meta(meta::FAILING_CHECKS, checks.to_vec()),
        );
    }
}

/// A synthetic failed run for `category` as wire-format text. The same
/// (category, seed) always yields the same bytes.
pub fn synthesize(category: Category, seed: u64) -> String {
    let sink = MemorySink::new();
    let clock = Arc::new(AtomicU64::new(SYNTH_EPOCH_MS));
    let reader = Arc::clone(&clock);
    let options = SessionOptions {
        run_id: Some(format!("synth-{category}-{seed}")),
        clock: Some(Box::new(move || reader.load(Ordering::Relaxed))),
    };
    let mut run_meta = BTreeMap::new();
    run_meta.insert("task".to_string(), format!("synthetic {category} run"));
    run_meta.insert("category".to_string(), category.to_string());
    let h = start_session_with(Box::new(sink.clone()), None, &run_meta, options)
        .expect("memory sink accepts writes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((category as u64) << 32));
    let check = *CHECKS.choose(&mut rng).expect("non-empty");
    let mut run = Run { h, rng, clock };

    let lead_in = run.rng.gen_range(2..7);
    run.explore(lead_in);
    match category {
        Category::InsufficientValidation => insufficient_validation(&mut run, check),
        Category::RetryNoProgress => retry_no_progress(&mut run),
        Category::RuntimeEnvironment => runtime_environment(&mut run),
        Category::StateWorkflow => state_workflow(&mut run),
        Category::ToolSubprocess => tool_subprocess(&mut run),
        Category::PatchSubmission => patch_submission(&mut run),
    }
    run.verdict(&[check]);
    run.h.finalize_session(FinalStatus::Unresolved);
    sink.contents()
}

fn insufficient_validation(run: &mut Run, check: &str) {
    let edits = run.rng.gen_range(1..4);
    for _ in 0..edits {
        run.edit();
    }
    if run.rng.gen_bool(0.5) {
        run.think("The change is complete and the fix verified by inspection.");
    }
    run.submit(&format!("diff --git a/{check}"), Status::Ok, "");
}

fn retry_no_progress(run: &mut Run) {
    let file = *FILES[4..6].choose(&mut run.rng).expect("non-empty");
    let args = format!("pytest {file} -x");
    let n = run.rng.gen_range(4..7);
    for _ in 0..n {
        run.think("Let me run the tests again.");
        run.tool(
            "bash",
            &args,
            Status::Error,
            "AssertionError: expected 3 tokens, got 2",
        );
    }
    let tail = run.rng.gen_range(0..2);
    run.explore(tail);
    run.submit("diff --git a/src/parser.py", Status::Ok, "");
}

fn runtime_environment(run: &mut Run) {
    const INFRA: [(&str, &str); 4] = [
        ("docker", "docker: Error response from daemon: container 4f2a9c1e exited with OOMKilled"),
        ("bash", "pip install failed: connection timed out after 30000 ms"),
        ("kubectl", "dial tcp 10.0.3.17:6443: connect: connection refused"),
        ("bash", "platform outage: runner pool unavailable"),
    ];
    let (tool, text) = *INFRA.choose(&mut run.rng).expect("non-empty");
    let n = run.rng.gen_range(1..3);
    for i in 0..n {
        run.think("Setting up the environment.");
        run.tool(tool, &format!("setup --attempt {i} --target env{i}"), Status::Error, text);
    }
    let tail = run.rng.gen_range(0..2);
    run.explore(tail);
    run.submit("diff --git a/setup.cfg", Status::Ok, "");
}

fn state_workflow(run: &mut Run) {
    const STATES: [(&str, &str, &str, &str); 3] = [
        ("replicas", "0", "3", "deploy/api.yaml"),
        ("migration_version", "41", "42", "db/migrations"),
        ("feature_flag", "off", "on", "config/flags.json"),
    ];
    let (key, observed, expected, artifact) = *STATES.choose(&mut run.rng).expect("non-empty");
    run.think("Checking the deployment state.");
    run.record(
        BoundaryEvent::new(EventType::EnvObservation)
            .payload(format!("{key}={observed}"))
            .meta(meta::TOOL, "state_probe")
            .meta(meta::ARTIFACT, artifact)
            .meta(meta::STATE, serde_json::json!({ key: observed }))
            .meta(meta::EXPECTED, serde_json::json!({ key: expected })),
    );
    run.edit();
    run.verify("rollout", false);
    let tail = run.rng.gen_range(0..2);
    run.explore(tail);
    run.submit("diff --git a/deploy", Status::Ok, "");
}

fn tool_subprocess(run: &mut Run) {
    const SCRIPTS: [&str; 5] = ["scripts/build.py", "scripts/gen.py", "scripts/lint.py", "tools/migrate.py", "manage.py"];
    let mut scripts = SCRIPTS.to_vec();
    scripts.shuffle(&mut run.rng);
    for script in &scripts[..3] {
        run.think("Running the helper script.");
        run.tool(
            "python",
            &format!("python {script}"),
            Status::Error,
            "Traceback (most recent call last): ModuleNotFoundError: No module named 'yaml'",
        );
        // The agent carries on with unrelated actions.
        run.explore(1);
    }
    run.submit("diff --git a/scripts", Status::Ok, "");
}

fn patch_submission(run: &mut Run) {
    run.edit();
    for i in 0..3 {
        let line = run.rng.gen_range(100..999);
        run.submit(
            &format!("diff --git a/src/parser.py variant {i}"),
            Status::Error,
            &format!("patch rejected: corrupt patch at line {line}"),
        );
    }
}
