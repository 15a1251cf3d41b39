//! Run summaries written next to each log.

use nnmpc::paths::PathKind;
use serde::{Deserialize, Serialize};

use crate::config::{ControllerKind, PlantKind};
use crate::energy::{energy_display, energy_estimate};
use crate::metrics::{max_error, rmse, step_metrics, StepMetrics};
use crate::sim::SimRun;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rmse: f64,
    pub max_error: f64,
    pub amplitude: f64,
    pub rmse_pct_of_amplitude: f64,
    pub mean_iters: Option<f64>,
    /// Per-level metrics on step paths, empty otherwise.
    pub steps: Vec<StepMetrics>,
}

/// Deterministic summary of a run. Wall-clock timings live in
/// [`TimingReport`] so this file is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub plant: PlantKind,
    pub controller: ControllerKind,
    pub path: PathKind,
    pub control_dt: f64,
    pub steps: usize,
    pub t_final: f64,
    pub param_count: Option<usize>,
    /// Energy model over the run length, uAh, clamped at zero.
    pub energy_uah: Option<f64>,
    pub energy_model_uah: Option<f64>,
    pub summary: Summary,
}

pub fn summarize(run: &SimRun) -> RunReport {
    let err = run.errors();
    let amplitude = run.path.amplitude();
    let iters: Vec<usize> = run.rows.iter().filter_map(|r| r.iters).collect();
    let steps = if run.path.kind == PathKind::Step {
        let y0 = run.path.y0[0];
        step_metrics(&run.times(), &run.output(0), &run.path.levels, y0, run.path.dwell, y0)
    } else {
        Vec::new()
    };
    let rmse = rmse(&err);
    let t_final = run.rows.len() as f64 * run.dt;
    RunReport {
        plant: run.plant,
        controller: run.controller,
        path: run.path.kind,
        control_dt: run.dt,
        steps: run.rows.len(),
        t_final,
        param_count: run.param_count,
        energy_uah: run.param_count.map(|n| energy_display(n, t_final)),
        energy_model_uah: run.param_count.map(|n| energy_estimate(n, t_final)),
        summary: Summary {
            rmse,
            max_error: max_error(&err),
            amplitude,
            rmse_pct_of_amplitude: if amplitude > 0.0 { rmse / amplitude * 100.0 } else { 0.0 },
            mean_iters: (!iters.is_empty()).then(|| iters.iter().sum::<usize>() as f64 / iters.len() as f64),
            steps,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub samples: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub p95_s: f64,
    pub max_s: f64,
}

pub fn timing(run: &SimRun) -> TimingReport {
    let mut t: Vec<f64> = run.rows.iter().map(|r| r.solve_time).collect();
    t.sort_by(f64::total_cmp);
    let pick = |q: f64| t.get(((t.len() as f64 - 1.0) * q).round() as usize).copied().unwrap_or(0.0);
    TimingReport {
        samples: t.len(),
        mean_s: if t.is_empty() { 0.0 } else { t.iter().sum::<f64>() / t.len() as f64 },
        median_s: pick(0.5),
        p95_s: pick(0.95),
        max_s: t.last().copied().unwrap_or(0.0),
    }
}

/// Least-squares line `y = slope x + intercept`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}
