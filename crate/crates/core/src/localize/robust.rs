//! MAD-based robust z-scores with empirical-quantile tails.

use super::{Anchor, AnchorCategory, FindingKind, LocalizedFinding, Severity};
use crate::config::LocalizeConfig;
use crate::metrics::{series_of, MetricSeries, MetricWindow, METRIC_NAMES};
use crate::wire::{SignalFamily, TelemetryBundle};

/// Scales the MAD to the standard deviation of a normal distribution.
pub const MAD_CONSISTENCY: f64 = 1.4826;

const MAX_WINDOW_REFS: usize = 32;

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median absolute deviation around the median (unscaled).
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|x| (x - m).abs()).collect();
    median(&dev)
}

/// Linear-interpolation sample quantile (type 7).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Robust z-score of every value. When the MAD is zero but the values are
/// not all equal, the mean absolute deviation about the mean stands in for
/// it. Returns `None` for constant input.
pub fn robust_z_scores(values: &[f64]) -> Option<Vec<f64>> {
    let first = *values.first()?;
    if values.iter().all(|&x| x == first) {
        return None;
    }
    let med = median(values);
    let mut scale = mad(values);
    if scale == 0.0 {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        scale = values.iter().map(|x| (x - mean).abs()).sum::<f64>() / values.len() as f64;
    }
    Some(values.iter().map(|x| (x - med) / (MAD_CONSISTENCY * scale)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailDirection {
    Upper,
    Lower,
    Both,
}

/// Which tail of a metric indicates trouble: low progress and short intent
/// runs, high cost and volatility everywhere else.
pub fn tail_direction(metric_name: &str) -> TailDirection {
    match metric_name {
        "recovery_progress" | "progress_cost_coupling" | "intent_run_length_ratio" => TailDirection::Lower,
        n if METRIC_NAMES.contains(&n) => TailDirection::Upper,
        _ => TailDirection::Both,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricAnomaly {
    pub window_index: usize,
    pub step_range: (u64, u64),
    pub value: f64,
    pub robust_z: f64,
    pub severity: Severity,
}

/// Flags windows whose robust z-score crosses `z_thresh` in the metric's
/// bad direction and whose value also sits in the matching empirical tail.
/// Series shorter than four windows yield nothing.
pub fn detect_metric_anomalies(series: &MetricSeries, cfg: &LocalizeConfig) -> Vec<MetricAnomaly> {
    let values = series.raw();
    if values.len() < 4 {
        return Vec::new();
    }
    let Some(z) = robust_z_scores(&values) else {
        return Vec::new();
    };
    let upper = quantile(&values, cfg.upper_quantile);
    let lower = quantile(&values, cfg.lower_quantile);
    let dir = tail_direction(&series.metric_name);
    let t = cfg.z_thresh;

    values
        .iter()
        .zip(&z)
        .enumerate()
        .filter(|(_, (&x, &z))| {
            let high = z >= t && x >= upper;
            let low = z <= -t && x <= lower;
            match dir {
                TailDirection::Upper => high,
                TailDirection::Lower => low,
                TailDirection::Both => high || low,
            }
        })
        .map(|(i, (&x, &z))| MetricAnomaly {
            window_index: i,
            step_range: series.values[i].0,
            value: x,
            robust_z: z,
            severity: if z.abs() >= 2.0 * t {
                Severity::High
            } else {
                Severity::Medium
            },
        })
        .collect()
}

/// Span ids inside a step range, capped. Falls back to the closest earlier
/// span (or the first span) when the range holds none.
pub(crate) fn window_refs(bundle: &TelemetryBundle, start: u64, end: u64) -> Vec<String> {
    let refs: Vec<String> = bundle
        .spans_in(start, end)
        .take(MAX_WINDOW_REFS)
        .map(|s| s.span_id.clone())
        .collect();
    if !refs.is_empty() {
        return refs;
    }
    bundle
        .traces
        .iter()
        .rev()
        .find(|s| s.step <= start)
        .or(bundle.traces.first())
        .map(|s| vec![s.span_id.clone()])
        .unwrap_or_default()
}

pub fn metric_findings(bundle: &TelemetryBundle, windows: &[MetricWindow], cfg: &LocalizeConfig) -> Vec<LocalizedFinding> {
    let mut out = Vec::new();
    for name in METRIC_NAMES {
        let series = series_of(windows, name).expect("known metric");
        for a in detect_metric_anomalies(&series, cfg) {
            let mut f = LocalizedFinding::new(
                FindingKind::MetricAnomaly,
                Anchor::new(name, AnchorCategory::Metric),
                SignalFamily::Metrics,
                a.step_range,
                a.severity,
                a.robust_z.abs(),
                window_refs(bundle, a.step_range.0, a.step_range.1),
            );
            f.detail = format!(
                "{name} = {:.4} in steps {}-{} (robust z {:.2})",
                a.value, a.step_range.0, a.step_range.1, a.robust_z
            );
            out.push(f);
        }
    }
    out
}
