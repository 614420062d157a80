//! Add-one smoothed bigram model over a run's own intent sequence.

use std::collections::{BTreeSet, HashMap};
use std::hash::Hash;

use super::robust::quantile;
use super::{Anchor, AnchorCategory, FindingKind, LocalizedFinding, Severity};
use crate::config::LocalizeConfig;
use crate::wire::{IntentAnnotation, SignalFamily};

#[derive(Debug, Clone)]
pub struct BigramModel<T> {
    pairs: HashMap<(T, T), usize>,
    outgoing: HashMap<T, usize>,
    vocab: usize,
}

impl<T: Copy + Eq + Hash + Ord> BigramModel<T> {
    /// Counts transitions in `seq`; the vocabulary is the set of symbols in
    /// `seq`.
    pub fn fit(seq: &[T]) -> Self {
        let mut pairs = HashMap::new();
        let mut outgoing = HashMap::new();
        for w in seq.windows(2) {
            *pairs.entry((w[0], w[1])).or_insert(0) += 1;
            *outgoing.entry(w[0]).or_insert(0) += 1;
        }
        let vocab = seq.iter().collect::<BTreeSet<_>>().len();
        BigramModel { pairs, outgoing, vocab }
    }

    /// `(count(prev, next) + 1) / (count(prev, *) + V)`.
    pub fn probability(&self, prev: T, next: T) -> f64 {
        let joint = self.pairs.get(&(prev, next)).copied().unwrap_or(0);
        let total = self.outgoing.get(&prev).copied().unwrap_or(0);
        (joint + 1) as f64 / (total + self.vocab) as f64
    }

    pub fn surprise(&self, prev: T, next: T) -> f64 {
        -self.probability(prev, next).log2()
    }
}

/// Surprise in bits of every transition `seq[i-1] -> seq[i]`, in order.
pub fn transition_surprises<T: Copy + Eq + Hash + Ord>(seq: &[T]) -> Vec<f64> {
    let model = BigramModel::fit(seq);
    seq.windows(2).map(|w| model.surprise(w[0], w[1])).collect()
}

/// Emits an `intent_surprise` finding for each transition above both the
/// empirical surprise quantile and the absolute floor. Needs at least three
/// annotations.
pub fn score_intent_transitions(intent: &[IntentAnnotation], cfg: &LocalizeConfig) -> Vec<LocalizedFinding> {
    if intent.len() < 3 {
        return Vec::new();
    }
    let labels: Vec<_> = intent.iter().map(|a| a.label).collect();
    let surprises = transition_surprises(&labels);
    let cut = quantile(&surprises, cfg.surprise_quantile);
    surprises
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > cut && s > cfg.surprise_floor_bits)
        .map(|(i, &s)| {
            let (prev, next) = (&intent[i], &intent[i + 1]);
            let mut f = LocalizedFinding::new(
                FindingKind::IntentSurprise,
                Anchor::new(
                    &format!("{}->{}", prev.label.as_str(), next.label.as_str()),
                    AnchorCategory::Transition,
                ),
                SignalFamily::Intent,
                (prev.step, next.step),
                Severity::Medium,
                s,
                vec![prev.span_id.clone(), next.span_id.clone()],
            );
            f.detail = format!(
                "{} -> {} at step {} ({s:.3} bits)",
                prev.label.as_str(),
                next.label.as_str(),
                next.step
            );
            f
        })
        .collect()
}
