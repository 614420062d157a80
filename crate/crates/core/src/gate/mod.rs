//! Deterministic Guidance Gate. Decides whether a diagnosis may be turned
//! into corrective guidance, and builds that guidance from fused evidence.

mod hint;

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hint::{format_hint, token_estimate, HintBlock, HINT_HEADER};

use crate::config::GateConfig;
use crate::diagnose::StructuredDiagnosis;
use crate::fuse::FusedEvidenceRecord;
use crate::localize::{extract_entities, AnchorCategory, FindingKind, InfraClass};

pub const MIN_BUDGET_TOKENS: usize = 100;

pub const HINT_RECHECK: &str = "Re-check the evidence from the failed run before changing anything.";
pub const HINT_RERUN: &str = "Rerun the verification checks and confirm they pass.";
pub const HINT_NO_PREMATURE: &str = "Do not submit or declare completion until verification passes.";

/// The fixed set of non-corrective hints used whenever guidance is blocked.
pub const CONSERVATIVE_HINTS: [&str; 3] = [HINT_RECHECK, HINT_RERUN, HINT_NO_PREMATURE];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GateError {
    #[error("hint budget {0} is below the minimum of {MIN_BUDGET_TOKENS} tokens")]
    BudgetTooSmall(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonInjectableReason {
    Ungrounded,
    NotActionable,
    OutOfScope,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grounding {
    pub grounded: bool,
    /// Resolving records cited by the cause or anchor, anchor citations first.
    pub supporting: Vec<String>,
    /// Entities named by the diagnosis that no supporting record backs.
    pub stripped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceTarget {
    pub text: String,
    pub record_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionFields {
    pub target: GuidanceTarget,
    pub operation: String,
    pub verification_signal: String,
    pub boundary_condition: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Actionability {
    Actionable(ActionFields),
    NotActionable { missing: String },
    OutOfScope { infra_class: InfraClass },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryGuidance {
    pub injectable: bool,
    pub target: Option<GuidanceTarget>,
    pub operation: String,
    pub verification_signal: String,
    pub boundary_condition: String,
    pub non_injectable_reason: Option<NonInjectableReason>,
    pub conservative_hints: Vec<String>,
    /// Records to cite in the hint, target record first.
    pub evidence_ids: Vec<String>,
    /// One-line cause text shown below the action fields.
    pub detail: String,
}

fn record_map(records: &[FusedEvidenceRecord]) -> HashMap<&str, &FusedEvidenceRecord> {
    records.iter().map(|r| (r.record_id.as_str(), r)).collect()
}

fn mentioned_entities(d: &StructuredDiagnosis) -> BTreeSet<String> {
    static QUOTED: OnceLock<Regex> = OnceLock::new();
    let quoted = QUOTED.get_or_init(|| Regex::new(r"'([A-Za-z0-9_./:-]+)'").expect("valid regex"));
    let mut out = BTreeSet::new();
    let texts = [&d.primary_cause.text, &d.behavioral_mistake.text]
        .into_iter()
        .chain(d.contributing_factors.iter().map(|f| &f.text));
    for text in texts {
        let (services, paths) = extract_entities(text);
        out.extend(services);
        out.extend(paths);
        out.extend(quoted.captures_iter(text).map(|c| c[1].to_string()));
    }
    out
}

fn backed_by(name: &str, records: &[&FusedEvidenceRecord]) -> bool {
    let lower = name.to_lowercase();
    records.iter().any(|r| {
        r.entities.mentions(name)
            || r.support.iter().any(|u| {
                u.anchor.key == lower
                    || u.tool.as_deref().is_some_and(|t| t.eq_ignore_ascii_case(name))
                    || u.entities.mentions(name)
            })
    })
}

/// Grounded iff the primary cause or the failure anchor cites a resolving
/// record. Named entities without backing evidence are reported as stripped.
pub fn grounding_check(d: &StructuredDiagnosis, records: &[FusedEvidenceRecord]) -> Grounding {
    let by_id = record_map(records);
    let mut supporting: Vec<String> = Vec::new();
    for id in d.failure_anchor.record_ids.iter().chain(&d.primary_cause.record_ids) {
        if by_id.contains_key(id.as_str()) && !supporting.contains(id) {
            supporting.push(id.clone());
        }
    }
    let backing: Vec<&FusedEvidenceRecord> = d
        .cited_ids()
        .into_iter()
        .filter_map(|id| by_id.get(id).copied())
        .collect();
    let stripped = mentioned_entities(d)
        .into_iter()
        .filter(|name| !backed_by(name, &backing))
        .collect();
    Grounding {
        grounded: !supporting.is_empty(),
        supporting,
        stripped,
    }
}

fn target_for(record: &FusedEvidenceRecord, stripped: &[String]) -> Option<String> {
    let keep = |set: &BTreeSet<String>| set.iter().find(|e| !stripped.contains(e)).cloned();
    let e = &record.entities;
    if let Some(a) = keep(&e.artifacts) {
        return Some(match keep(&e.services) {
            Some(s) => format!("artifact {a} (service {s})"),
            None => format!("artifact {a}"),
        });
    }
    if let Some(s) = keep(&e.services) {
        return Some(format!("service {s}"));
    }
    if let Some(t) = keep(&e.tools) {
        return Some(format!("tool {t}"));
    }
    keep(&e.checks).map(|c| format!("check '{c}'"))
}

fn operation_for(record: &FusedEvidenceRecord) -> Option<String> {
    if let Some(m) = record.support.iter().find_map(|u| u.mismatch.as_ref()) {
        let place = record
            .entities
            .artifacts
            .iter()
            .next()
            .map(|a| format!(" in {a}"))
            .unwrap_or_default();
        return Some(format!(
            "compare and correct {}{place} (observed {}, expected {})",
            m.key, m.observed, m.expected
        ));
    }
    let lead = record.lead();
    let tool = lead.tool.as_deref();
    match (lead.origin_kind, lead.anchor.category) {
        (FindingKind::OutcomeMismatch, AnchorCategory::Check) => Some(format!("make check '{}' pass", lead.anchor.key)),
        (FindingKind::RepeatedFailure, _) => Some(format!(
            "change approach for {} instead of retrying the same arguments",
            tool.unwrap_or(&lead.anchor.key)
        )),
        (FindingKind::ExecutionError, _) => {
            let sig = lead.signature.as_deref().unwrap_or(&lead.anchor.key);
            Some(match tool {
                Some(t) => format!("fix what makes {t} fail with '{sig}'"),
                None => format!("fix what raises '{sig}'"),
            })
        }
        (FindingKind::InfrastructureClue, _) => tool.map(|t| {
            format!(
                "adjust the {t} call that hits {} errors",
                lead.infra_class.unwrap_or(InfraClass::None).describe()
            )
        }),
        _ => None,
    }
}

struct Verification {
    signal: String,
    boundary: String,
}

fn verification_for(record: &FusedEvidenceRecord, records: &[FusedEvidenceRecord]) -> Option<Verification> {
    let mut parts: Vec<(String, String)> = Vec::new();
    let connection = record
        .support
        .iter()
        .any(|u| u.infra_class == Some(InfraClass::Connection));
    if connection {
        if let Some(svc) = record.entities.services.iter().next() {
            parts.push((format!("connection to {svc} succeeds"), "connectivity".into()));
        }
    }
    let mut checks: BTreeSet<&str> = record.entities.checks.iter().map(String::as_str).collect();
    for r in records {
        for u in &r.support {
            if u.origin_kind == FindingKind::OutcomeMismatch && u.anchor.category == AnchorCategory::Check {
                checks.insert(&u.anchor.key);
            }
        }
    }
    for c in checks.into_iter().take(3) {
        parts.push((format!("check '{c}' passes"), format!("{c} verification")));
    }
    if parts.is_empty() {
        if let Some(m) = record.support.iter().find_map(|u| u.mismatch.as_ref()) {
            parts.push((
                format!("{} reads {}", m.key, m.expected),
                format!("a re-read of {}", m.key),
            ));
        }
    }
    if parts.is_empty() {
        let sig = record.support.iter().find_map(|u| u.signature.as_deref())?;
        parts.push((
            format!("error '{sig}' no longer appears"),
            "a rerun without that error".into(),
        ));
    }

    let shorts: Vec<&str> = parts.iter().map(|(_, s)| s.as_str()).collect();
    let until = match shorts.as_slice() {
        [one] => format!("{one} succeeds"),
        [a, b] => format!("{a} and {b} both succeed"),
        [init @ .., last] => format!("{} and {last} all succeed", init.join(", ")),
        [] => unreachable!("parts is non-empty"),
    };
    let mut boundary = format!("do not call submit() until {until}");
    let repeated = records
        .iter()
        .flat_map(|r| &r.support)
        .find(|u| u.origin_kind == FindingKind::RepeatedFailure);
    if let Some(u) = repeated {
        boundary.push_str(&format!(
            "; do not repeat {} with the same arguments",
            u.tool.as_deref().unwrap_or(&u.anchor.key)
        ));
    }
    Some(Verification {
        signal: parts.into_iter().map(|(l, _)| l).collect::<Vec<_>>().join("; "),
        boundary,
    })
}

fn dominating_infra(cause: &[&FusedEvidenceRecord], cfg: &GateConfig) -> Option<InfraClass> {
    let units = || cause.iter().flat_map(|r| &r.support);
    if units().any(|u| u.anchor.is_agent_side()) {
        return None;
    }
    units()
        .filter(|u| u.severity == crate::localize::Severity::High)
        .filter_map(|u| u.infra_class)
        .find(|c| cfg.deny_list.contains(c))
}

/// Scope validation, then synthesis of the four action fields from the
/// diagnosis' top supporting record.
pub fn actionability_filter(
    grounding: &Grounding,
    records: &[FusedEvidenceRecord],
    cfg: &GateConfig,
) -> Actionability {
    let by_id = record_map(records);
    let cause: Vec<&FusedEvidenceRecord> = grounding
        .supporting
        .iter()
        .filter_map(|id| by_id.get(id.as_str()).copied())
        .collect();
    let Some(&top) = cause.first() else {
        return Actionability::NotActionable {
            missing: "target".into(),
        };
    };
    if let Some(infra_class) = dominating_infra(&cause, cfg) {
        return Actionability::OutOfScope { infra_class };
    }
    let missing = |field: &str| Actionability::NotActionable { missing: field.into() };
    let Some(target) = target_for(top, &grounding.stripped) else {
        return missing("target");
    };
    let Some(operation) = operation_for(top) else {
        return missing("operation");
    };
    let Some(v) = verification_for(top, records) else {
        return missing("verification_signal");
    };
    Actionability::Actionable(ActionFields {
        target: GuidanceTarget {
            text: target,
            record_id: top.record_id.clone(),
        },
        operation,
        verification_signal: v.signal,
        boundary_condition: v.boundary,
    })
}

/// Injectable iff grounded and actionable; otherwise only the fixed
/// conservative hints.
pub fn construct_guidance(
    d: &StructuredDiagnosis,
    grounding: &Grounding,
    actionability: &Actionability,
    cfg: &GateConfig,
) -> RecoveryGuidance {
    let blocked = |reason| RecoveryGuidance {
        injectable: false,
        target: None,
        operation: String::new(),
        verification_signal: String::new(),
        boundary_condition: String::new(),
        non_injectable_reason: Some(reason),
        conservative_hints: CONSERVATIVE_HINTS.iter().map(|h| h.to_string()).collect(),
        evidence_ids: Vec::new(),
        detail: String::new(),
    };
    if !grounding.grounded {
        return blocked(NonInjectableReason::Ungrounded);
    }
    let fields = match actionability {
        Actionability::Actionable(f) => f,
        Actionability::NotActionable { .. } => return blocked(NonInjectableReason::NotActionable),
        Actionability::OutOfScope { .. } => return blocked(NonInjectableReason::OutOfScope),
    };
    let mut evidence_ids = vec![fields.target.record_id.clone()];
    for id in grounding.supporting.iter().chain(
        d.contributing_factors
            .iter()
            .filter_map(|f| f.record_id.as_ref()),
    ) {
        if !evidence_ids.contains(id) {
            evidence_ids.push(id.clone());
        }
    }
    evidence_ids.truncate(cfg.max_citations);
    RecoveryGuidance {
        injectable: true,
        target: Some(fields.target.clone()),
        operation: fields.operation.clone(),
        verification_signal: fields.verification_signal.clone(),
        boundary_condition: fields.boundary_condition.clone(),
        non_injectable_reason: None,
        conservative_hints: Vec::new(),
        evidence_ids,
        detail: d.primary_cause.text.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub grounding: Grounding,
    pub actionability: Option<Actionability>,
    pub guidance: RecoveryGuidance,
}

/// The whole gate as one pure function of (diagnosis, records, config).
pub fn run_gate(d: &StructuredDiagnosis, records: &[FusedEvidenceRecord], cfg: &GateConfig) -> GateOutcome {
    let grounding = grounding_check(d, records);
    let actionability = grounding
        .grounded
        .then(|| actionability_filter(&grounding, records, cfg));
    let fallback = Actionability::NotActionable {
        missing: "grounding".into(),
    };
    let guidance = construct_guidance(d, &grounding, actionability.as_ref().unwrap_or(&fallback), cfg);
    GateOutcome {
        grounding,
        actionability,
        guidance,
    }
}
