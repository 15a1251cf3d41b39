//! Rollout logs to supervised training matrices.
//!
//! A [`RawLog`] holds three aligned time series: applied inputs (`q x m`),
//! measured outputs (`q x n`) and optional sensor channels (`q x w`). Row `k`
//! stores the input applied from sample `k` to `k+1` and the output measured at
//! sample `k`, so output row `k+1` is the first one affected by input row `k`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat2;

#[derive(Debug, Clone, PartialEq)]
pub struct RawLog {
    pub inputs: Mat2,
    pub outputs: Mat2,
    pub sensors: Option<Mat2>,
    /// Sample period in seconds.
    pub dt: f64,
}

impl RawLog {
    pub fn new(inputs: Mat2, outputs: Mat2, sensors: Option<Mat2>, dt: f64) -> Result<Self> {
        let q = inputs.rows();
        if outputs.rows() != q || sensors.as_ref().is_some_and(|s| s.rows() != q) {
            return Err(Error::Data(format!(
                "row counts differ: inputs {q}, outputs {}, sensors {:?}",
                outputs.rows(),
                sensors.as_ref().map(Mat2::rows)
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::Argument(format!("dt must be positive, got {dt}")));
        }
        Ok(RawLog {
            inputs,
            outputs,
            sensors,
            dt,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.cols()
    }

    pub fn sensor_dim(&self) -> usize {
        self.sensors.as_ref().map_or(0, Mat2::cols)
    }

    fn select_rows(&self, idx: &[usize], dt: f64) -> Result<RawLog> {
        let pick = |m: &Mat2| -> Result<Mat2> {
            let mut data = Vec::with_capacity(idx.len() * m.cols());
            for &i in idx {
                data.extend_from_slice(m.row(i));
            }
            Mat2::new(idx.len(), m.cols(), data)
        };
        RawLog::new(
            pick(&self.inputs)?,
            pick(&self.outputs)?,
            self.sensors.as_ref().map(pick).transpose()?,
            dt,
        )
    }
}

/// Builds the lagged design matrix and labels.
///
/// With `L = max(n_d, d_d)`, row `r` is anchored at label time `t = r + L`:
///
/// ```text
/// X[r] = [ u[t-1], u[t-2], .., u[t-n_d] | y[t-1], .., y[t-d_d] | s[t] ]
/// Y[r] = y[t]
/// ```
///
/// Blocks are most-recent-first, the same order the controller's in-place
/// roll maintains at run time. The labels are `y[L..q]`, and every block bound
/// is derived from that anchor, so no row sees an output later than `t-1`.
pub fn window_dataset(log: &RawLog, n_d: usize, d_d: usize) -> Result<(Mat2, Mat2)> {
    if n_d == 0 || d_d == 0 {
        return Err(Error::Argument("history depths must be at least 1".into()));
    }
    let lag = n_d.max(d_d);
    let q = log.len();
    if q <= lag {
        return Err(Error::Data(format!(
            "need more than {lag} rows to window with n_d={n_d}, d_d={d_d}; got {q}"
        )));
    }
    let (m, n, w) = (log.input_dim(), log.output_dim(), log.sensor_dim());
    let p = n_d * m + d_d * n + w;
    let rows = q - lag;
    let mut x = Vec::with_capacity(rows * p);
    let mut y = Vec::with_capacity(rows * n);
    for r in 0..rows {
        let t = r + lag;
        for k in 1..=n_d {
            x.extend_from_slice(log.inputs.row(t - k));
        }
        for k in 1..=d_d {
            x.extend_from_slice(log.outputs.row(t - k));
        }
        if let Some(s) = &log.sensors {
            x.extend_from_slice(s.row(t));
        }
        y.extend_from_slice(log.outputs.row(t));
    }
    Ok((Mat2::new(rows, p, x)?, Mat2::new(rows, n, y)?))
}

/// Per-column min-max scaling onto `[-0.5, 0.5]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ColumnScaler {
    /// Fits column ranges. A constant column `c` gets the range
    /// `[c - widen, c + widen]` so it maps to exactly 0.
    pub fn fit(data: &Mat2, widen: f64) -> Result<Self> {
        if !(widen > 0.0) {
            return Err(Error::Argument("constant-column widening must be positive".into()));
        }
        let mut min = vec![f64::INFINITY; data.cols()];
        let mut max = vec![f64::NEG_INFINITY; data.cols()];
        for i in 0..data.rows() {
            for (j, v) in data.row(i).iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Data(format!("non-finite value at row {i}, column {j}")));
                }
                min[j] = min[j].min(*v);
                max[j] = max[j].max(*v);
            }
        }
        for j in 0..min.len() {
            if max[j] <= min[j] {
                let c = min[j];
                min[j] = c - widen;
                max[j] = c + widen;
            }
        }
        Ok(ColumnScaler { min, max })
    }

    pub fn identity(cols: usize) -> Self {
        ColumnScaler {
            min: vec![-0.5; cols],
            max: vec![0.5; cols],
        }
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.len() != self.max.len() {
            return Err(Error::Data("scaler min/max lengths differ".into()));
        }
        if let Some(j) = (0..self.min.len()).find(|&j| !(self.max[j] > self.min[j])) {
            return Err(Error::Data(format!("scaler column {j} has max <= min")));
        }
        Ok(())
    }

    pub fn apply_value(&self, j: usize, v: f64) -> f64 {
        (v - self.min[j]) / (self.max[j] - self.min[j]) - 0.5
    }

    pub fn invert_value(&self, j: usize, z: f64) -> f64 {
        (z + 0.5) * (self.max[j] - self.min[j]) + self.min[j]
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, v)| self.apply_value(j, *v)).collect()
    }

    pub fn invert_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, z)| self.invert_value(j, *z)).collect()
    }

    pub fn apply(&self, data: &Mat2) -> Result<Mat2> {
        self.map(data, Self::apply_value)
    }

    pub fn invert(&self, data: &Mat2) -> Result<Mat2> {
        self.map(data, Self::invert_value)
    }

    fn map(&self, data: &Mat2, f: fn(&Self, usize, f64) -> f64) -> Result<Mat2> {
        if data.cols() != self.len() {
            return Err(Error::dim(format!(
                "scaler has {} columns, data has {}",
                self.len(),
                data.cols()
            )));
        }
        let mut out = data.clone();
        let cols = data.cols();
        for (k, v) in out.as_mut_slice().iter_mut().enumerate() {
            *v = f(self, k % cols, *v);
        }
        Ok(out)
    }

    fn concat(parts: &[&ColumnScaler]) -> ColumnScaler {
        ColumnScaler {
            min: parts.iter().flat_map(|p| p.min.iter().copied()).collect(),
            max: parts.iter().flat_map(|p| p.max.iter().copied()).collect(),
        }
    }
}

/// Scalers for each raw signal of a log.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalScalers {
    pub inputs: ColumnScaler,
    pub outputs: ColumnScaler,
    pub sensors: Option<ColumnScaler>,
}

pub const DEFAULT_CONSTANT_WIDEN: f64 = 1e-6;

pub fn fit_normalizer(log: &RawLog) -> Result<SignalScalers> {
    Ok(SignalScalers {
        inputs: ColumnScaler::fit(&log.inputs, DEFAULT_CONSTANT_WIDEN)?,
        outputs: ColumnScaler::fit(&log.outputs, DEFAULT_CONSTANT_WIDEN)?,
        sensors: log
            .sensors
            .as_ref()
            .map(|s| ColumnScaler::fit(s, DEFAULT_CONSTANT_WIDEN))
            .transpose()?,
    })
}

impl SignalScalers {
    pub fn apply(&self, log: &RawLog) -> Result<RawLog> {
        self.map(log, ColumnScaler::apply)
    }

    pub fn invert(&self, log: &RawLog) -> Result<RawLog> {
        self.map(log, ColumnScaler::invert)
    }

    fn map(&self, log: &RawLog, f: fn(&ColumnScaler, &Mat2) -> Result<Mat2>) -> Result<RawLog> {
        let sensors = match (&log.sensors, &self.sensors) {
            (Some(s), Some(sc)) => Some(f(sc, s)?),
            (None, None) => None,
            _ => return Err(Error::Data("sensor scaler does not match the log".into())),
        };
        RawLog::new(f(&self.inputs, &log.inputs)?, f(&self.outputs, &log.outputs)?, sensors, log.dt)
    }

    /// Network-level normalization block for a window layout, with the
    /// signal ranges replicated across lag blocks.
    pub fn to_normalizer(&self, n_d: usize, d_d: usize) -> Normalizer {
        let mut parts: Vec<&ColumnScaler> = Vec::new();
        parts.extend(std::iter::repeat_n(&self.inputs, n_d));
        parts.extend(std::iter::repeat_n(&self.outputs, d_d));
        if let Some(s) = &self.sensors {
            parts.push(s);
        }
        let input = ColumnScaler::concat(&parts);
        Normalizer {
            input_min: input.min,
            input_max: input.max,
            output_min: self.outputs.min.clone(),
            output_max: self.outputs.max.clone(),
        }
    }
}

/// Normalization block persisted with a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
    pub output_min: Vec<f64>,
    pub output_max: Vec<f64>,
}

impl Normalizer {
    pub fn inputs(&self) -> ColumnScaler {
        ColumnScaler {
            min: self.input_min.clone(),
            max: self.input_max.clone(),
        }
    }

    pub fn outputs(&self) -> ColumnScaler {
        ColumnScaler {
            min: self.output_min.clone(),
            max: self.output_max.clone(),
        }
    }

    pub fn validate(&self, p: usize, n: usize) -> Result<()> {
        let (i, o) = (self.inputs(), self.outputs());
        i.validate()?;
        o.validate()?;
        if i.len() != p || o.len() != n {
            return Err(Error::ModelShape(format!(
                "normalization has {} inputs / {} outputs, model has {p} / {n}",
                i.len(),
                o.len()
            )));
        }
        Ok(())
    }

    /// Scaler for the actuator signal: the first `m` input columns.
    pub fn actuator_scaler(&self, m: usize) -> ColumnScaler {
        ColumnScaler {
            min: self.input_min[..m].to_vec(),
            max: self.input_max[..m].to_vec(),
        }
    }

    /// Scaler for the sensor tail: the last `w` input columns.
    pub fn sensor_scaler(&self, w: usize) -> ColumnScaler {
        let p = self.input_min.len();
        ColumnScaler {
            min: self.input_min[p - w..].to_vec(),
            max: self.input_max[p - w..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

/// Expanding-window time-series splits.
///
/// The rows are cut into `folds + 1` contiguous chunks whose sizes differ by
/// at most one. Fold `i` trains on chunks `0..=i` and tests on chunk `i+1`;
/// the last fold's test chunk ends at `rows`.
pub fn timeseries_splits(rows: usize, folds: usize) -> Result<Vec<Split>> {
    if folds == 0 {
        return Err(Error::Argument("need at least one fold".into()));
    }
    if rows < folds + 1 {
        return Err(Error::Data(format!("{rows} rows cannot make {folds} folds")));
    }
    let chunks = folds + 1;
    let bound = |j: usize| j * rows / chunks;
    Ok((0..folds)
        .map(|i| Split {
            train: 0..bound(i + 1),
            test: bound(i + 1)..bound(i + 2),
        })
        .collect())
}

/// Keeps every `factor`-th row.
pub fn downsample(log: &RawLog, factor: usize) -> Result<RawLog> {
    if factor == 0 {
        return Err(Error::Argument("downsample factor must be >= 1".into()));
    }
    let idx: Vec<usize> = (0..log.len()).step_by(factor).collect();
    log.select_rows(&idx, log.dt * factor as f64)
}

/// Resamples to a new period by taking, for each output time `k * new_dt`,
/// the latest input row at or before it.
pub fn resample(log: &RawLog, new_dt: f64) -> Result<RawLog> {
    if !(new_dt >= log.dt) {
        return Err(Error::Argument(format!(
            "resample only reduces the rate: {new_dt} < {}",
            log.dt
        )));
    }
    let duration = (log.len() - 1) as f64 * log.dt;
    let count = (duration / new_dt + 1e-9).floor() as usize + 1;
    let ratio = new_dt / log.dt;
    let idx: Vec<usize> = (0..count)
        .map(|k| ((k as f64 * ratio) + 1e-9).floor() as usize)
        .map(|i| i.min(log.len() - 1))
        .collect();
    log.select_rows(&idx, new_dt)
}
