use std::collections::BTreeMap;

use super::{
    canonicalize_error, extract_entities, Anchor, AnchorCategory, Entities, FindingKind, InfraClass, LocalizedFinding,
    MismatchDetail, Severity,
};
use crate::metrics::{arg_fingerprint, failed_call_indices};
use crate::wire::{meta, EventType, SignalFamily, Span, TelemetryBundle};

fn is_error_span(s: &Span) -> bool {
    match s.event {
        EventType::RuntimeException => true,
        EventType::ToolReturn | EventType::Submission => s.status.is_failure(),
        _ => false,
    }
}

/// Text to canonicalize for an error span; spans with an empty payload are
/// described by their event, tool and return code.
fn error_text(s: &Span) -> String {
    if !s.payload.trim().is_empty() {
        return s.payload.clone();
    }
    let what = s.tool().unwrap_or(s.event.as_str());
    match s.meta_u64(meta::RETURN_CODE) {
        Some(rc) => format!("{what} exited with return code {rc}"),
        None => format!("{what} failed"),
    }
}

fn span_entities(s: &Span, text: &str) -> Entities {
    let (services, paths) = extract_entities(text);
    let mut e = Entities {
        services,
        artifacts: paths,
        ..Entities::default()
    };
    if let Some(t) = s.tool() {
        e.tools.insert(t.to_string());
    }
    if let Some(svc) = s.meta_str(meta::SERVICE) {
        e.services.insert(svc.to_string());
    }
    if let Some(a) = s.meta_str(meta::ARTIFACT) {
        e.artifacts.insert(a.to_string());
    }
    e
}

struct Group<'a> {
    spans: Vec<&'a Span>,
    infra: InfraClass,
    entities: Entities,
}

/// One `execution_error` per (tool, signature) group of error spans, plus an
/// `infrastructure_clue` for each group whose signature has an
/// infrastructure class.
pub fn group_error_findings(bundle: &TelemetryBundle) -> Vec<LocalizedFinding> {
    let mut groups: BTreeMap<(String, String), Group> = BTreeMap::new();
    for s in bundle.traces.iter().filter(|s| is_error_span(s)) {
        let text = error_text(s);
        let sig = canonicalize_error(&text).expect("error text is never empty");
        let tool = match s.event {
            EventType::Submission => s.tool().unwrap_or("submit"),
            _ => s.tool().unwrap_or(""),
        };
        let g = groups.entry((tool.to_string(), sig.canonical)).or_insert_with(|| Group {
            spans: Vec::new(),
            infra: sig.infra_class,
            entities: Entities::default(),
        });
        g.spans.push(s);
        g.entities.extend(&span_entities(s, &text));
    }

    let mut out = Vec::new();
    for ((tool, canonical), g) in groups {
        let size = g.spans.len();
        let range = (g.spans[0].step, g.spans[size - 1].step);
        let refs: Vec<String> = g.spans.iter().map(|s| s.span_id.clone()).collect();
        let tool = (!tool.is_empty()).then_some(tool);
        let mut entities = g.entities;
        if let Some(t) = &tool {
            entities.tools.insert(t.clone());
        }

        let severity = if size >= 3 || g.infra != InfraClass::None {
            Severity::High
        } else {
            Severity::Medium
        };
        let mut f = LocalizedFinding::new(
            FindingKind::ExecutionError,
            Anchor::new(&canonical, AnchorCategory::ErrorSignature),
            SignalFamily::Logs,
            range,
            severity,
            size as f64,
            refs.clone(),
        );
        f.tool = tool.clone();
        f.signature = Some(canonical.clone());
        f.infra_class = Some(g.infra);
        f.entities = entities.clone();
        f.detail = format!(
            "{}x '{}'{}",
            size,
            canonical,
            tool.as_deref().map(|t| format!(" from {t}")).unwrap_or_default()
        );
        out.push(f);

        if g.infra != InfraClass::None {
            let mut clue = LocalizedFinding::new(
                FindingKind::InfrastructureClue,
                Anchor::new(g.infra.as_str(), AnchorCategory::Infrastructure),
                SignalFamily::Logs,
                range,
                Severity::High,
                size as f64,
                refs,
            );
            clue.tool = tool;
            clue.signature = Some(canonical);
            clue.infra_class = Some(g.infra);
            clue.entities = entities;
            clue.detail = format!("{} condition observed {size}x", g.infra.describe());
            out.push(clue);
        }
    }
    out
}

/// One `execution_error` per (tool, state key) whose observed workflow state
/// disagrees with the expected state.
pub fn state_mismatch_findings(bundle: &TelemetryBundle) -> Vec<LocalizedFinding> {
    let mut groups: BTreeMap<(String, String), Vec<&crate::wire::StateMismatch>> = BTreeMap::new();
    for m in bundle.env.iter().flat_map(|e| &e.mismatches) {
        groups
            .entry((m.tool.clone().unwrap_or_default(), m.key.clone()))
            .or_default()
            .push(m);
    }
    groups
        .into_values()
        .map(|ms| {
            let last = ms[ms.len() - 1];
            let mut entities = Entities::default();
            for m in &ms {
                entities.artifacts.extend(m.artifact.clone());
                entities.services.extend(m.service.clone());
                entities.tools.extend(m.tool.clone());
            }
            let mut f = LocalizedFinding::new(
                FindingKind::ExecutionError,
                Anchor::new(&last.key, AnchorCategory::State),
                SignalFamily::Env,
                (ms[0].step, last.step),
                Severity::High,
                ms.len() as f64,
                ms.iter().map(|m| m.span_id.clone()).collect(),
            );
            f.tool = last.tool.clone();
            f.mismatch = Some(MismatchDetail {
                key: last.key.clone(),
                observed: last.observed.clone(),
                expected: last.expected.clone(),
            });
            f.entities = entities;
            f.detail = format!(
                "state '{}' is {} but {} is expected{}",
                last.key,
                last.observed,
                last.expected,
                last.artifact.as_deref().map(|a| format!(" ({a})")).unwrap_or_default()
            );
            f
        })
        .collect()
}

/// Failed tool calls grouped by (tool, argument fingerprint); groups of at
/// least `repeat_min` become `repeated_failure` findings.
pub fn detect_repeated_failures(bundle: &TelemetryBundle, repeat_min: usize) -> Vec<LocalizedFinding> {
    let failed = failed_call_indices(&bundle.traces);
    let mut groups: BTreeMap<(String, String), Vec<&Span>> = BTreeMap::new();
    for (i, s) in bundle.traces.iter().enumerate() {
        if failed.contains(&i) {
            groups
                .entry((s.tool().unwrap_or("").to_string(), arg_fingerprint(s)))
                .or_default()
                .push(s);
        }
    }
    groups
        .into_iter()
        .filter(|(_, spans)| spans.len() >= repeat_min.max(1))
        .map(|((tool, fp), spans)| {
            let n = spans.len();
            let mut f = LocalizedFinding::new(
                FindingKind::RepeatedFailure,
                Anchor::new(&format!("{tool}:{fp}"), AnchorCategory::ArgumentFingerprint),
                SignalFamily::Traces,
                (spans[0].step, spans[n - 1].step),
                Severity::High,
                n as f64,
                spans.iter().map(|s| s.span_id.clone()).collect(),
            );
            if !tool.is_empty() {
                f.entities.tools.insert(tool.clone());
                f.tool = Some(tool.clone());
            }
            f.detail = format!("{tool} called {n}x with the same arguments ({fp}), failing every time");
            f
        })
        .collect()
}
