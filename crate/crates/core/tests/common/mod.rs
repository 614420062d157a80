#![allow(dead_code)]

use failscope::wire::{write_trace, EventType, Span, Status};
use serde_json::json;

/// A run whose registration path cannot reach user-service because the
/// Service targetPort does not match the container port, and which submits
/// before any verification passes.
pub fn registration_case() -> String {
    let mut spans = Vec::new();
    let mut n = 0u32;
    let mut push = |step: u64, event: EventType, status: Status, f: &dyn Fn(Span) -> Span| {
        let s = Span::new(format!("s{n:03}"), step, 1_000 + 100 * n as u64, event, status);
        n += 1;
        spans.push(f(s));
    };
    push(0, EventType::SystemMessage, Status::Ok, &|s| {
        s.with_meta("role", "header").with_meta("run_id", "case-registration").with_meta("task", "fix user registration")
    });
    push(0, EventType::ModelResponse, Status::Ok, &|s| s.with_payload("Let me look at the pods.").with_meta("tokens", 120));
    push(0, EventType::ToolCall, Status::Ok, &|s| {
        s.with_meta("tool", "kubectl").with_meta("arg_fp", "get-pods").with_payload("kubectl get pods")
    });
    push(1, EventType::ModelResponse, Status::Ok, &|s| s.with_payload("Check nginx logs.").with_meta("tokens", 90));
    push(1, EventType::ToolCall, Status::Ok, &|s| s.with_meta("tool", "kubectl").with_meta("arg_fp", "get-svc"));
    push(2, EventType::ToolCall, Status::Ok, &|s| s.with_meta("tool", "kubectl").with_meta("arg_fp", "logs-nginx"));
    push(2, EventType::ToolReturn, Status::Error, &|s| {
        s.with_meta("tool", "kubectl")
            .with_meta("arg_fp", "logs-nginx")
            .with_meta("service", "user-service")
            .with_payload("connect to user-service:8080 failed: connection refused")
    });
    push(3, EventType::EnvObservation, Status::Ok, &|s| {
        s.with_meta("tool", "kubectl")
            .with_meta("artifact", "k8s/user-service.yaml")
            .with_meta("service", "user-service")
            .with_meta("state", json!({"targetPort": "8080"}))
            .with_meta("expected", json!({"targetPort": "9090"}))
    });
    push(4, EventType::ToolCall, Status::Ok, &|s| s.with_meta("tool", "kubectl").with_meta("arg_fp", "logs-nginx-tail"));
    push(4, EventType::ToolReturn, Status::Error, &|s| {
        s.with_meta("tool", "kubectl")
            .with_meta("arg_fp", "logs-nginx-tail")
            .with_meta("service", "user-service")
            .with_payload("connect to user-service:8080 failed: connection refused")
    });
    push(5, EventType::Submission, Status::Ok, &|s| s.with_meta("tool", "submit").with_payload("submit()"));
    push(5, EventType::OutcomeVerdict, Status::Ok, &|s| {
        s.with_meta("verdict", "unresolved").with_meta("failing_checks", json!(["registration"]))
    });
    write_trace(&spans)
}

use std::collections::BTreeMap;

use failscope::diagnose::{AnchorField, CitedText, DiagnosisOrigin, Factor, StructuredDiagnosis};
use failscope::fuse::{fuse, EvidenceUnit, FusedEvidenceRecord};
use failscope::gate::NonInjectableReason;
use failscope::localize::{Anchor, AnchorCategory, Entities, FindingKind, InfraClass, MismatchDetail, Severity};
use failscope::metrics::{MetricVector, MetricWindow};
use failscope::wire::SignalFamily;
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::Value;

// ---- robust z oracles ----

/// (series, median, scale) with median and scale worked out by hand. The
/// scale is the MAD, or the mean absolute deviation when the MAD is zero.
pub fn mad_cases() -> Vec<(Vec<f64>, f64, f64)> {
    vec![
        // devs 2,1,0,1,97
        (vec![1.0, 2.0, 3.0, 4.0, 100.0], 3.0, 1.0),
        // sorted 10,11,12,12,13,50; devs 2,0,1,1,38,0
        (vec![10.0, 12.0, 11.0, 13.0, 50.0, 12.0], 12.0, 1.0),
        // MAD 0; mean 1.2, abs devs 1.2,1.2,1.2,0.2,3.8
        (vec![0.0, 0.0, 0.0, 1.0, 5.0], 0.0, 1.52),
        // devs 3,1,1,3
        (vec![2.0, 4.0, 6.0, 8.0], 5.0, 2.0),
        // devs 5,1,0,1,5
        (vec![-5.0, -1.0, 0.0, 1.0, 5.0], 0.0, 1.0),
        // devs 0,0,0.1,0.1,0,2.5
        (vec![0.5, 0.5, 0.6, 0.4, 0.5, 3.0], 0.5, 0.05),
        // sorted 97..102,250; devs 0,2,2,1,1,150,3
        (vec![100.0, 102.0, 98.0, 101.0, 99.0, 250.0, 97.0], 100.0, 2.0),
        // MAD 0; mean 1.2, abs devs 0.2 x4, 0.8
        (vec![1.0, 1.0, 1.0, 1.0, 2.0], 1.0, 0.32),
        // sorted 1,1,2,3,4,5,6,9; devs .5,2.5,.5,2.5,1.5,5.5,1.5,2.5
        (vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0], 3.5, 2.0),
        // devs 25,15,5,5,15,975
        (vec![0.0, 10.0, 20.0, 30.0, 40.0, 1000.0], 25.0, 15.0),
        // devs 1,1,1,0,0,0,1
        (vec![7.0, 7.0, 7.0, 8.0, 8.0, 8.0, 9.0], 8.0, 1.0),
        // devs 1.25,1.25,1.25,41.25
        (vec![-2.5, -2.5, 0.0, 40.0], -1.25, 1.25),
    ]
}

// ---- bigram oracles ----

/// (sequence, add-one transition probabilities) worked out by hand.
pub fn bigram_cases() -> Vec<(Vec<char>, Vec<f64>)> {
    vec![
        // V=3; ab=2 ba=1 bc=1; out a=2 b=2
        (vec!['a', 'b', 'a', 'b', 'c'], vec![3.0 / 5.0, 2.0 / 5.0, 3.0 / 5.0, 2.0 / 5.0]),
        // V=1; aa=3; out a=3
        (vec!['a', 'a', 'a', 'a'], vec![1.0, 1.0, 1.0]),
        // V=4; each pair once
        (vec!['a', 'b', 'c', 'd'], vec![2.0 / 5.0, 2.0 / 5.0, 2.0 / 5.0]),
        // V=3; ab=2 ba=1 ac=1 ca=1; out a=3 b=1 c=1
        (
            vec!['a', 'b', 'a', 'c', 'a', 'b'],
            vec![3.0 / 6.0, 2.0 / 4.0, 2.0 / 6.0, 2.0 / 4.0, 3.0 / 6.0],
        ),
        // V=3; xy=1 yy=2 yx=1 xz=1; out x=2 y=3
        (
            vec!['x', 'y', 'y', 'y', 'x', 'z'],
            vec![2.0 / 5.0, 3.0 / 6.0, 3.0 / 6.0, 2.0 / 6.0, 2.0 / 5.0],
        ),
        // V=2; ab=1; out a=1
        (vec!['a', 'b'], vec![2.0 / 3.0]),
    ]
}

// ---- isolation forest planting ----

/// Twenty windows with small jitter around a common profile plus one window
/// pushed far out on three metrics. Returns the windows and the planted index.
pub fn planted_windows(seed: u64) -> (Vec<MetricWindow>, usize) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let base = [0.4, 0.3, 0.5, 0.2, 0.6, 0.5, 0.3, 0.7, 0.2];
    let planted = rng.gen_range(0..21);
    let windows = (0..21u64)
        .map(|i| {
            let mut v = base.map(|b| b + rng.gen_range(-0.03..0.03));
            if i as usize == planted {
                v[0] += 0.5;
                v[3] += 0.6;
                v[4] -= 0.5;
            }
            MetricWindow {
                start_step: i * 4,
                end_step: i * 4 + 7,
                vector: MetricVector::from_array(v),
            }
        })
        .collect();
    (windows, planted)
}

// ---- evidence units ----

pub fn unit(kind: FindingKind, anchor: Anchor, source: SignalFamily, range: (u64, u64), severity: Severity) -> EvidenceUnit {
    EvidenceUnit {
        anchor,
        source,
        time_scope: range,
        severity,
        evidence_ref: vec![format!("s{}", range.0)],
        origin_kind: kind,
        score: 1.0,
        tool: None,
        signature: None,
        infra_class: None,
        mismatch: None,
        entities: Entities::default(),
        detail: String::new(),
    }
}

const KINDS: [FindingKind; 8] = [
    FindingKind::MetricAnomaly,
    FindingKind::AggregateMetricAnomaly,
    FindingKind::ExecutionError,
    FindingKind::RepeatedFailure,
    FindingKind::IntentSurprise,
    FindingKind::PatternSummary,
    FindingKind::OutcomeMismatch,
    FindingKind::InfrastructureClue,
];
const CATEGORIES: [AnchorCategory; 6] = [
    AnchorCategory::Tool,
    AnchorCategory::ErrorSignature,
    AnchorCategory::Metric,
    AnchorCategory::Check,
    AnchorCategory::State,
    AnchorCategory::Claim,
];
const FAMILIES: [SignalFamily; 6] = [
    SignalFamily::Metrics,
    SignalFamily::Logs,
    SignalFamily::Traces,
    SignalFamily::Intent,
    SignalFamily::Env,
    SignalFamily::Outcome,
];
const SEVERITIES: [Severity; 3] = [Severity::Low, Severity::Medium, Severity::High];

/// A random unit drawn from small pools so that anchors, tools, signatures
/// and step ranges collide often.
pub fn random_unit(rng: &mut impl Rng) -> EvidenceUnit {
    let start = rng.gen_range(0..30u64);
    let end = start + rng.gen_range(0..5u64);
    let key = format!("k{}", rng.gen_range(0..8));
    let mut u = unit(
        *KINDS.choose(rng).unwrap(),
        Anchor::new(&key, *CATEGORIES.choose(rng).unwrap()),
        *FAMILIES.choose(rng).unwrap(),
        (start, end),
        *SEVERITIES.choose(rng).unwrap(),
    );
    u.evidence_ref = (0..rng.gen_range(1..4)).map(|_| format!("s{}", rng.gen_range(0..40))).collect();
    u.score = rng.gen_range(0..100) as f64 / 10.0;
    if rng.gen_bool(0.4) {
        u.tool = Some(["bash", "kubectl", "python"].choose(rng).unwrap().to_string());
    }
    if rng.gen_bool(0.3) {
        u.signature = Some(format!("sig{}", rng.gen_range(0..4)));
    }
    if rng.gen_bool(0.2) {
        u.infra_class = Some(InfraClass::Connection);
    }
    u.detail = format!("d{}", rng.gen_range(0..3));
    u
}

pub fn random_units(rng: &mut impl Rng, n: usize) -> Vec<EvidenceUnit> {
    (0..n).map(|_| random_unit(rng)).collect()
}

/// Every unit across `records`, as sorted JSON text, for multiset equality.
pub fn unit_multiset(units: impl IntoIterator<Item = EvidenceUnit>) -> Vec<String> {
    let mut v: Vec<String> = units.into_iter().map(|u| serde_json::to_string(&u).unwrap()).collect();
    v.sort();
    v
}

// ---- gate truth table ----

pub struct GateCase {
    pub name: String,
    pub diagnosis: StructuredDiagnosis,
    pub records: Vec<FusedEvidenceRecord>,
    pub injectable: bool,
    pub reason: Option<NonInjectableReason>,
}

fn cited(text: &str, ids: Vec<String>) -> CitedText {
    CitedText {
        text: text.into(),
        record_ids: ids,
    }
}

fn diagnosis_over(records: &[FusedEvidenceRecord], ids: Vec<String>) -> StructuredDiagnosis {
    let anchor = records[0].anchor.clone();
    StructuredDiagnosis {
        primary_cause: cited("the run failed", ids.clone()),
        failure_anchor: AnchorField { anchor, record_ids: ids },
        behavioral_mistake: cited("stopped without verifying outcome", vec![]),
        contributing_factors: vec![Factor {
            text: "no further factor".into(),
            record_id: None,
        }],
        evidence_summary: String::new(),
        confidence: 0.5,
        origin: DiagnosisOrigin::Fallback,
    }
}

fn check_unit(check: &str, step: u64) -> EvidenceUnit {
    let mut u = unit(
        FindingKind::OutcomeMismatch,
        Anchor::new(check, AnchorCategory::Check),
        SignalFamily::Outcome,
        (step, step),
        Severity::High,
    );
    u.entities.checks.insert(check.into());
    u
}

/// Six evidence shapes: two actionable, two missing a field, two dominated
/// by an infrastructure condition on the deny list.
fn shapes() -> Vec<(&'static str, Vec<EvidenceUnit>, Option<NonInjectableReason>)> {
    let mut state = unit(
        FindingKind::ExecutionError,
        Anchor::new("replicas", AnchorCategory::State),
        SignalFamily::Env,
        (2, 2),
        Severity::High,
    );
    state.mismatch = Some(MismatchDetail {
        key: "replicas".into(),
        observed: "1".into(),
        expected: "3".into(),
    });
    state.entities.artifacts.insert("deploy/api.yaml".into());

    let mut retry = unit(
        FindingKind::RepeatedFailure,
        Anchor::new("pytest-x", AnchorCategory::ArgumentFingerprint),
        SignalFamily::Traces,
        (1, 4),
        Severity::High,
    );
    retry.tool = Some("bash".into());
    retry.entities.tools.insert("bash".into());

    let metric = unit(
        FindingKind::MetricAnomaly,
        Anchor::new("token_velocity", AnchorCategory::Metric),
        SignalFamily::Metrics,
        (0, 3),
        Severity::High,
    );

    let mut surprise = unit(
        FindingKind::IntentSurprise,
        Anchor::new("explore->edit", AnchorCategory::Transition),
        SignalFamily::Intent,
        (3, 4),
        Severity::High,
    );
    surprise.entities.tools.insert("editor".into());

    let mut conn = unit(
        FindingKind::ExecutionError,
        Anchor::new("connect to <id> failed", AnchorCategory::ErrorSignature),
        SignalFamily::Logs,
        (1, 3),
        Severity::High,
    );
    conn.signature = Some("connect to <id> failed".into());
    conn.infra_class = Some(InfraClass::Connection);
    conn.entities.services.insert("db".into());

    let mut oom = unit(
        FindingKind::InfrastructureClue,
        Anchor::new("out_of_memory", AnchorCategory::Infrastructure),
        SignalFamily::Logs,
        (5, 6),
        Severity::High,
    );
    oom.infra_class = Some(InfraClass::OutOfMemory);
    oom.entities.services.insert("worker".into());

    vec![
        ("actionable/state-mismatch", vec![state, check_unit("deploy", 9)], None),
        ("actionable/repeated-failure", vec![retry, check_unit("unit", 9)], None),
        (
            "missing-field/no-target",
            vec![metric, check_unit("unit", 9)],
            Some(NonInjectableReason::NotActionable),
        ),
        (
            "missing-field/no-operation",
            vec![surprise, check_unit("unit", 9)],
            Some(NonInjectableReason::NotActionable),
        ),
        ("infra/connection", vec![conn, check_unit("unit", 9)], Some(NonInjectableReason::OutOfScope)),
        ("infra/out-of-memory", vec![oom, check_unit("unit", 9)], Some(NonInjectableReason::OutOfScope)),
    ]
}

/// {grounded, ungrounded} x six evidence shapes. Ungrounded diagnoses
/// either cite an id that does not exist or cite nothing.
pub fn gate_truth_table() -> Vec<GateCase> {
    let mut out = Vec::new();
    for (i, (name, units, reason)) in shapes().into_iter().enumerate() {
        let records = fuse(&units);
        let lead = records
            .iter()
            .find(|r| r.support.iter().any(|u| u == &units[0]))
            .expect("first unit is fused somewhere");
        out.push(GateCase {
            name: format!("grounded/{name}"),
            diagnosis: diagnosis_over(&records, vec![lead.record_id.clone()]),
            records: records.clone(),
            injectable: reason.is_none(),
            reason,
        });
        let ids = if i % 2 == 0 { vec!["rec-000000000000".to_string()] } else { vec![] };
        out.push(GateCase {
            name: format!("ungrounded/{name}"),
            diagnosis: diagnosis_over(&records, ids),
            records,
            injectable: false,
            reason: Some(NonInjectableReason::Ungrounded),
        });
    }
    out
}

// ---- wire records ----

const EVENTS: [failscope::wire::EventType; 10] = failscope::wire::EventType::ALL;
const STATUSES: [Status; 4] = [Status::Ok, Status::Error, Status::Timeout, Status::Unknown];

fn random_text(rng: &mut impl Rng, max: usize) -> String {
    const POOL: &[char] = &[
        'a', 'z', 'Q', '0', '9', ' ', '"', '\\', '\n', '\t', '{', '}', ':', ',', 'é', 'ß', '→', '日', '🙂', '\u{1}',
    ];
    (0..rng.gen_range(0..=max)).map(|_| *POOL.choose(rng).unwrap()).collect()
}

fn random_value(rng: &mut impl Rng, depth: u32) -> Value {
    match rng.gen_range(0..if depth == 0 { 5 } else { 7 }) {
        0 => Value::Null,
        1 => Value::Bool(rng.gen()),
        2 => Value::from(rng.gen::<i64>()),
        3 => Value::from(rng.gen::<f64>() * 10f64.powi(rng.gen_range(-8..12))),
        4 => Value::String(random_text(rng, 12)),
        5 => Value::Array((0..rng.gen_range(0..4)).map(|_| random_value(rng, depth - 1)).collect()),
        _ => Value::Object(
            (0..rng.gen_range(0..4))
                .map(|i| (format!("k{i}"), random_value(rng, depth - 1)))
                .collect(),
        ),
    }
}

/// An arbitrary well-formed span, including unknown top-level fields.
pub fn random_span(rng: &mut impl Rng, i: usize) -> Span {
    let mut s = Span::new(
        format!("span-{i}-{}", random_text(rng, 3)),
        rng.gen_range(0..i64::MAX as u64),
        rng.gen_range(0..i64::MAX as u64),
        *EVENTS.choose(rng).unwrap(),
        *STATUSES.choose(rng).unwrap(),
    )
    .with_payload(random_text(rng, 40));
    if rng.gen_bool(0.5) {
        s.parent_id = Some(format!("p{}", rng.gen_range(0..1000)));
    }
    for k in 0..rng.gen_range(0..5) {
        s.meta.insert(format!("m{k}{}", random_text(rng, 2)), random_value(rng, 2));
    }
    let extra: BTreeMap<String, Value> = (0..rng.gen_range(0..3))
        .map(|k| (format!("x_{k}"), random_value(rng, 2)))
        .collect();
    s.extra = extra;
    s
}
