//! Seeded isolation forest over window feature vectors.
//!
//! Anomaly score is `2^(-E[h(x)] / c(psi))` where `h` is the path length to
//! isolate `x` (plus the `c(size)` correction at unsplit leaves) and `c(n)`
//! is the average unsuccessful-search path length of a binary search tree
//! over `n` points.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::robust::window_refs;
use super::{Anchor, AnchorCategory, FindingKind, LocalizedFinding, Severity};
use crate::config::LocalizeConfig;
use crate::metrics::{MetricWindow, METRIC_NAMES};
use crate::wire::{SignalFamily, TelemetryBundle};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `c(n)`: expected path length of an unsuccessful BST search.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { size: usize },
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

#[derive(Debug, Clone)]
pub struct IsolationForest {
    trees: Vec<Node>,
    sample_size: usize,
}

fn grow(data: &[Vec<f64>], rows: &[usize], depth: usize, limit: usize, rng: &mut ChaCha8Rng) -> Node {
    if rows.len() <= 1 || depth >= limit {
        return Node::Leaf { size: rows.len() };
    }
    let dims = data[rows[0]].len();
    let ranges: Vec<(usize, f64, f64)> = (0..dims)
        .filter_map(|f| {
            let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                (lo.min(data[r][f]), hi.max(data[r][f]))
            });
            (hi > lo).then_some((f, lo, hi))
        })
        .collect();
    if ranges.is_empty() {
        return Node::Leaf { size: rows.len() };
    }
    let (feature, lo, hi) = ranges[rng.gen_range(0..ranges.len())];
    let threshold = rng.gen_range(lo..hi);
    let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| data[r][feature] < threshold);
    Node::Split {
        feature,
        threshold,
        left: Box::new(grow(data, &left, depth + 1, limit, rng)),
        right: Box::new(grow(data, &right, depth + 1, limit, rng)),
    }
}

fn path_length(node: &Node, x: &[f64], depth: usize) -> f64 {
    match node {
        Node::Leaf { size } => depth as f64 + average_path_length(*size),
        Node::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            if x[*feature] < *threshold {
                path_length(left, x, depth + 1)
            } else {
                path_length(right, x, depth + 1)
            }
        }
    }
}

impl IsolationForest {
    /// Fits `n_trees` trees, each on `min(subsample, n)` rows drawn without
    /// replacement, with height limit `ceil(log2(subsample))`.
    ///
    /// # Panics
    /// If `data` is empty.
    pub fn fit(data: &[Vec<f64>], n_trees: usize, subsample: usize, seed: u64) -> Self {
        assert!(!data.is_empty(), "isolation forest needs data");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample_size = subsample.min(data.len()).max(1);
        let limit = (sample_size as f64).log2().ceil().max(1.0) as usize;
        let trees = (0..n_trees)
            .map(|_| {
                let rows = sample(&mut rng, data.len(), sample_size).into_vec();
                grow(data, &rows, 0, limit, &mut rng)
            })
            .collect();
        IsolationForest { trees, sample_size }
    }

    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| path_length(t, x, 0)).sum::<f64>() / self.trees.len() as f64
    }

    /// Score in (0, 1]; values near 1 are easy to isolate.
    pub fn score(&self, x: &[f64]) -> f64 {
        let c = average_path_length(self.sample_size);
        if c == 0.0 {
            return 1.0;
        }
        2f64.powf(-self.mean_path_length(x) / c)
    }
}

/// Index and score of the window the forest isolates most easily. Ties go to
/// the earliest window. `None` below four windows.
pub fn most_anomalous_window(windows: &[MetricWindow], n_trees: usize, subsample: usize, seed: u64) -> Option<(usize, f64)> {
    if windows.len() < 4 {
        return None;
    }
    let data: Vec<Vec<f64>> = windows.iter().map(|w| w.vector.to_array().to_vec()).collect();
    let forest = IsolationForest::fit(&data, n_trees, subsample, seed);
    data.iter()
        .map(|x| forest.score(x))
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((i, s)),
        })
}

pub fn detect_aggregate_anomaly(
    bundle: &TelemetryBundle,
    windows: &[MetricWindow],
    cfg: &LocalizeConfig,
) -> Option<LocalizedFinding> {
    let (idx, score) = most_anomalous_window(windows, cfg.forest_trees, cfg.forest_subsample, cfg.forest_seed)?;
    let w = &windows[idx];
    let mut f = LocalizedFinding::new(
        FindingKind::AggregateMetricAnomaly,
        Anchor::new(&format!("window {}-{}", w.start_step, w.end_step), AnchorCategory::Window),
        SignalFamily::Metrics,
        (w.start_step, w.end_step),
        Severity::Low,
        score,
        window_refs(bundle, w.start_step, w.end_step),
    );
    let arr = w.vector.to_array();
    f.detail = METRIC_NAMES
        .iter()
        .zip(arr)
        .map(|(n, v)| format!("{n}={v:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    Some(f)
}
