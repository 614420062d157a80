//! Plain-text recovery hint block.
//!
//! Injectable guidance renders as:
//!
//! ```text
//! RECOVERY HINT
//! TARGET: <target>
//! OPERATION: <operation>
//! VERIFY: <verification signal>
//! BOUNDARY: <boundary condition>
//! EVIDENCE: <record id> steps <a>-<b>: <finding detail>
//! NOTE: <primary cause>
//! ```
//!
//! with up to three `EVIDENCE:` lines. Blocked guidance renders as
//! `RECOVERY HINT (conservative: <reason>)` followed by `- <hint>` lines.
//! Lines end with `\n`.

use serde::{Deserialize, Serialize};

use super::{GateError, NonInjectableReason, RecoveryGuidance, MIN_BUDGET_TOKENS};
use crate::fuse::FusedEvidenceRecord;
use crate::util::{clip_chars, collapse_whitespace};

pub const HINT_HEADER: &str = "RECOVERY HINT";

const CITATION_DETAIL_CHARS: usize = 160;
const NOTE_CHARS: usize = 300;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintBlock {
    pub text: String,
    pub token_estimate: usize,
    pub cited_record_ids: Vec<String>,
}

/// `ceil(chars / 4)`.
pub fn token_estimate(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

fn reason_str(r: Option<NonInjectableReason>) -> &'static str {
    match r {
        Some(NonInjectableReason::Ungrounded) => "ungrounded",
        Some(NonInjectableReason::NotActionable) => "not_actionable",
        Some(NonInjectableReason::OutOfScope) => "out_of_scope",
        None => "blocked",
    }
}

fn citation(r: &FusedEvidenceRecord) -> String {
    format!(
        "EVIDENCE: {} steps {}-{}: {}",
        r.record_id,
        r.time_scope.0,
        r.time_scope.1,
        clip_chars(&collapse_whitespace(&r.lead().detail), CITATION_DETAIL_CHARS)
    )
}

fn render(fields: &[(&str, String)], citations: &[String], note: Option<&str>) -> String {
    let mut out = format!("{HINT_HEADER}\n");
    for (label, value) in fields {
        out.push_str(&format!("{label}: {value}\n"));
    }
    for c in citations {
        out.push_str(c);
        out.push('\n');
    }
    if let Some(n) = note {
        out.push_str(&format!("NOTE: {n}\n"));
    }
    out
}

/// Renders guidance within `budget_tokens`. Over budget, the citation lines
/// go first (all together), then the note; the four action fields are only
/// ever shortened, never dropped.
pub fn format_hint(
    g: &RecoveryGuidance,
    records: &[FusedEvidenceRecord],
    budget_tokens: usize,
) -> Result<HintBlock, GateError> {
    if budget_tokens < MIN_BUDGET_TOKENS {
        return Err(GateError::BudgetTooSmall(budget_tokens));
    }
    let fits = |text: &str| token_estimate(text) <= budget_tokens;

    if !g.injectable {
        let mut text = format!("{HINT_HEADER} (conservative: {})\n", reason_str(g.non_injectable_reason));
        for h in &g.conservative_hints {
            let line = format!("- {h}\n");
            if !fits(&format!("{text}{line}")) {
                break;
            }
            text.push_str(&line);
        }
        return Ok(HintBlock {
            token_estimate: token_estimate(&text),
            text,
            cited_record_ids: Vec::new(),
        });
    }

    let target = g.target.as_ref().map(|t| t.text.clone()).unwrap_or_default();
    let fields = [
        ("TARGET", target),
        ("OPERATION", g.operation.clone()),
        ("VERIFY", g.verification_signal.clone()),
        ("BOUNDARY", g.boundary_condition.clone()),
    ];
    let cited: Vec<&FusedEvidenceRecord> = g
        .evidence_ids
        .iter()
        .filter_map(|id| records.iter().find(|r| &r.record_id == id))
        .collect();
    let mut citations: Vec<String> = cited.iter().map(|r| citation(r)).collect();
    let note = clip_chars(&collapse_whitespace(&g.detail), NOTE_CHARS);
    let note = (!note.is_empty()).then_some(note);

    let mut text = render(&fields, &citations, note.as_deref());
    if !fits(&text) {
        citations.clear();
        text = render(&fields, &citations, note.as_deref());
    }
    if !fits(&text) {
        text = render(&fields, &citations, None);
    }
    if !fits(&text) {
        let longest = fields.iter().map(|(_, v)| v.chars().count()).max().unwrap_or(0);
        for cap in (8..longest).rev() {
            let clipped: Vec<(&str, String)> = fields.iter().map(|(l, v)| (*l, clip_chars(v, cap))).collect();
            text = render(&clipped, &[], None);
            if fits(&text) {
                break;
            }
        }
    }

    let mut cited_record_ids: Vec<String> = g.target.iter().map(|t| t.record_id.clone()).collect();
    for r in cited.iter().take(citations.len()) {
        if !cited_record_ids.contains(&r.record_id) {
            cited_record_ids.push(r.record_id.clone());
        }
    }
    Ok(HintBlock {
        token_estimate: token_estimate(&text),
        text,
        cited_record_ids,
    })
}
