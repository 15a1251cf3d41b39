//! Step-response and tracking metrics over logged series.

use serde::{Deserialize, Serialize};

/// Time from `t[0]` until the response first reaches 90% of the way from
/// `start` to `target`, interpolated between samples. `None` if it never does
/// or the step has no amplitude.
pub fn rise_time(t: &[f64], y: &[f64], start: f64, target: f64) -> Option<f64> {
    let amp = target - start;
    if amp == 0.0 || t.is_empty() {
        return None;
    }
    let level = start + 0.9 * amp;
    let dir = amp.signum();
    let k = y.iter().position(|v| dir * (v - level) >= 0.0)?;
    if k == 0 {
        return Some(0.0);
    }
    let frac = (level - y[k - 1]) / (y[k] - y[k - 1]);
    Some(t[k - 1] + frac * (t[k] - t[k - 1]) - t[0])
}

/// Peak excursion past the target as a percentage of the step, never negative.
pub fn overshoot_pct(y: &[f64], start: f64, target: f64) -> f64 {
    let amp = target - start;
    if amp == 0.0 {
        return 0.0;
    }
    let dir = amp.signum();
    let peak = y.iter().fold(f64::NEG_INFINITY, |m, v| m.max(dir * v));
    ((peak - dir * target) / amp.abs() * 100.0).max(0.0)
}

/// `|mean of the last 10% of samples - target|`.
pub fn steady_state_error(y: &[f64], target: f64) -> f64 {
    let tail = (y.len() / 10).max(1).min(y.len());
    let seg = &y[y.len() - tail..];
    (seg.iter().sum::<f64>() / seg.len() as f64 - target).abs()
}

/// Root-mean-square of per-sample errors, averaged over outputs:
/// `sqrt(mean_k |e_k|^2 / n)`.
pub fn rmse(err: &[Vec<f64>]) -> f64 {
    if err.is_empty() {
        return 0.0;
    }
    let n = err[0].len().max(1) as f64;
    let ss: f64 = err.iter().map(|e| e.iter().map(|v| v * v).sum::<f64>() / n).sum();
    (ss / err.len() as f64).sqrt()
}

pub fn max_error(err: &[Vec<f64>]) -> f64 {
    err.iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub index: usize,
    pub start_time: f64,
    pub target: f64,
    pub amplitude: f64,
    pub rise_time: Option<f64>,
    pub overshoot_pct: f64,
    pub steady_state_error: f64,
    pub steady_state_error_pct: f64,
}

/// Metrics for each dwell of a step schedule on output 0. `start_level` is
/// the reference before the first step.
pub fn step_metrics(t: &[f64], y: &[f64], levels: &[f64], offset: f64, dwell: f64, start_level: f64) -> Vec<StepMetrics> {
    let mut prev = start_level;
    let mut out = Vec::new();
    for (i, level) in levels.iter().enumerate() {
        let target = offset + level;
        let (t0, t1) = (i as f64 * dwell, (i + 1) as f64 * dwell);
        let idx: Vec<usize> = (0..t.len()).filter(|&k| t[k] >= t0 - 1e-9 && t[k] < t1 - 1e-9).collect();
        if idx.is_empty() {
            break;
        }
        let ts: Vec<f64> = idx.iter().map(|&k| t[k]).collect();
        let ys: Vec<f64> = idx.iter().map(|&k| y[k]).collect();
        let amplitude = (target - prev).abs();
        let sse = steady_state_error(&ys, target);
        out.push(StepMetrics {
            index: i,
            start_time: t0,
            target,
            amplitude,
            rise_time: rise_time(&ts, &ys, prev, target),
            overshoot_pct: overshoot_pct(&ys, prev, target),
            steady_state_error: sse,
            steady_state_error_pct: if amplitude > 0.0 { sse / amplitude * 100.0 } else { 0.0 },
        });
        prev = target;
    }
    out
}
