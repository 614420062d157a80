//! Cross-signal fusion of localized findings into evidence records.
//!
//! Two units land in the same record when any of these holds (closed
//! transitively):
//! - equal anchors;
//! - equal error signatures;
//! - the same tool and overlapping step ranges;
//! - both come from the outcome family and their step ranges overlap.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::localize::{
    Anchor, AnchorCategory, Entities, FindingKind, InfraClass, LocalizedFinding, MismatchDetail, Severity,
};
use crate::util::stable_hash;
use crate::wire::SignalFamily;

pub const CLAIM_VS_EVALUATOR: &str = "claim-vs-evaluator";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceUnit {
    pub anchor: Anchor,
    pub source: SignalFamily,
    pub time_scope: (u64, u64),
    pub severity: Severity,
    pub evidence_ref: Vec<String>,
    pub origin_kind: FindingKind,
    pub score: f64,
    pub tool: Option<String>,
    pub signature: Option<String>,
    pub infra_class: Option<InfraClass>,
    pub mismatch: Option<MismatchDetail>,
    pub entities: Entities,
    pub detail: String,
}

impl EvidenceUnit {
    pub fn is_success_claim(&self) -> bool {
        self.origin_kind == FindingKind::OutcomeMismatch && self.anchor.category == AnchorCategory::Claim
    }

    /// Lower ranks make better record anchors.
    fn anchor_rank(&self) -> u8 {
        match (self.origin_kind, self.anchor.category) {
            (FindingKind::OutcomeMismatch, AnchorCategory::Check) => 0,
            (FindingKind::RepeatedFailure, _) => 1,
            (FindingKind::ExecutionError, AnchorCategory::State) => 3,
            (FindingKind::ExecutionError, _) => 2,
            (FindingKind::OutcomeMismatch, AnchorCategory::Claim) => 5,
            (FindingKind::OutcomeMismatch, _) => 4,
            (FindingKind::InfrastructureClue, _) => 6,
            (FindingKind::IntentSurprise, _) => 7,
            (FindingKind::MetricAnomaly, _) => 8,
            (FindingKind::AggregateMetricAnomaly, _) => 9,
            (FindingKind::PatternSummary, _) => 10,
        }
    }

    fn overlaps(&self, other: &EvidenceUnit) -> bool {
        self.time_scope.0 <= other.time_scope.1 && other.time_scope.0 <= self.time_scope.1
    }

    fn compatible(&self, other: &EvidenceUnit) -> bool {
        if self.anchor == other.anchor {
            return true;
        }
        if self.signature.is_some() && self.signature == other.signature {
            return true;
        }
        if self.tool.is_some() && self.tool == other.tool && self.overlaps(other) {
            return true;
        }
        self.source == SignalFamily::Outcome && other.source == SignalFamily::Outcome && self.overlaps(other)
    }

    /// Total order used inside a record; the first unit supplies the anchor.
    fn member_key(&self) -> impl Ord + '_ {
        (
            std::cmp::Reverse(self.severity),
            self.anchor_rank(),
            self.source,
            self.time_scope,
            &self.anchor,
            &self.evidence_ref,
        )
    }
}

/// Lossless projection of a finding with its anchor re-canonicalized.
pub fn normalize_finding(f: &LocalizedFinding) -> EvidenceUnit {
    EvidenceUnit {
        anchor: Anchor::new(&f.anchor.key, f.anchor.category),
        source: f.source_family,
        time_scope: f.step_range,
        severity: f.severity,
        evidence_ref: f.evidence_refs.clone(),
        origin_kind: f.kind,
        score: f.score,
        tool: f.tool.clone(),
        signature: f.signature.clone(),
        infra_class: f.infra_class,
        mismatch: f.mismatch.clone(),
        entities: f.entities.clone(),
        detail: f.detail.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    /// Index into the record's `support`.
    pub left: usize,
    pub right: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedEvidenceRecord {
    pub record_id: String,
    pub anchor: Anchor,
    pub sources: BTreeSet<SignalFamily>,
    pub time_scope: (u64, u64),
    pub severity: Severity,
    pub support: Vec<EvidenceUnit>,
    pub conflicts: Vec<Conflict>,
    pub entities: Entities,
}

impl FusedEvidenceRecord {
    pub fn evidence_refs(&self) -> BTreeSet<&str> {
        self.support
            .iter()
            .flat_map(|u| u.evidence_ref.iter().map(String::as_str))
            .collect()
    }

    pub fn has_kind(&self, kind: FindingKind) -> bool {
        self.support.iter().any(|u| u.origin_kind == kind)
    }

    /// The unit that supplied the record's anchor.
    pub fn lead(&self) -> &EvidenceUnit {
        &self.support[0]
    }

    pub fn has_claim_conflict(&self) -> bool {
        self.conflicts.iter().any(|c| c.reason == CLAIM_VS_EVALUATOR)
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn record_id(anchor: &Anchor, support: &[EvidenceUnit]) -> String {
    let refs: BTreeSet<&str> = support
        .iter()
        .flat_map(|u| u.evidence_ref.iter().map(String::as_str))
        .collect();
    let content = format!(
        "{:?}|{}|{}",
        anchor.category,
        anchor.key,
        refs.into_iter().collect::<Vec<_>>().join(",")
    );
    format!("rec-{}", &stable_hash(&content)[..12])
}

fn build_record(mut support: Vec<EvidenceUnit>) -> FusedEvidenceRecord {
    support.sort_by(|a, b| {
        a.member_key().cmp(&b.member_key()).then_with(|| {
            let text = |u: &EvidenceUnit| serde_json::to_string(u).expect("units serialize");
            text(a).cmp(&text(b))
        })
    });
    let anchor = support[0].anchor.clone();
    let sources = support.iter().map(|u| u.source).collect();
    let time_scope = support.iter().fold((u64::MAX, 0), |(lo, hi), u| {
        (lo.min(u.time_scope.0), hi.max(u.time_scope.1))
    });
    let severity = support.iter().map(|u| u.severity).max().expect("non-empty support");
    let mut entities = Entities::default();
    for u in &support {
        entities.extend(&u.entities);
    }
    let mut conflicts = Vec::new();
    let claims: Vec<usize> = (0..support.len()).filter(|&i| support[i].is_success_claim()).collect();
    for i in claims {
        for (j, other) in support.iter().enumerate() {
            if other.origin_kind == FindingKind::OutcomeMismatch && !other.is_success_claim() {
                conflicts.push(Conflict {
                    left: i,
                    right: j,
                    reason: CLAIM_VS_EVALUATOR.into(),
                });
            }
        }
    }
    FusedEvidenceRecord {
        record_id: record_id(&anchor, &support),
        anchor,
        sources,
        time_scope,
        severity,
        support,
        conflicts,
        entities,
    }
}

/// Groups compatible units into records ordered by severity (desc), support
/// size (desc), earliest step, then record id. Independent of input order.
pub fn fuse(units: &[EvidenceUnit]) -> Vec<FusedEvidenceRecord> {
    let n = units.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if units[i].compatible(&units[j]) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<EvidenceUnit>> = vec![Vec::new(); n];
    for (i, u) in units.iter().enumerate() {
        let root = find(&mut parent, i);
        groups[root].push(u.clone());
    }
    let mut records: Vec<FusedEvidenceRecord> = groups.into_iter().filter(|g| !g.is_empty()).map(build_record).collect();
    records.sort_by(|a, b| {
        b.severity
            .cmp(&a.severity)
            .then(b.support.len().cmp(&a.support.len()))
            .then(a.time_scope.0.cmp(&b.time_scope.0))
            .then_with(|| a.record_id.cmp(&b.record_id))
    });
    records
}
