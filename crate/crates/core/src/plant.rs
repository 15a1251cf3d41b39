//! Mass-spring-damper plant, RK4 integration and the PID baseline.

use serde::{Deserialize, Serialize};

use crate::datapipe::RawLog;
use crate::error::{Error, Result};
use crate::linalg::Mat2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsdParams {
    /// N/m
    pub k: f64,
    /// N s/m
    pub c: f64,
    /// kg
    pub m: f64,
}

impl Default for MsdParams {
    fn default() -> Self {
        MsdParams { k: 40.0, c: 0.5, m: 0.1 }
    }
}

impl MsdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.c >= 0.0 && self.m > 0.0) {
            return Err(Error::Argument(format!("invalid plant parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    /// position, m
    pub x0: f64,
    /// velocity, m/s
    pub x1: f64,
    pub t: f64,
}

/// Selects measured outputs from the state vector `[x0, x1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMap {
    pub c: Mat2,
}

impl ObservationMap {
    /// Keeps the state entries whose diagonal flag is nonzero, so
    /// `diag{1, 0}` measures position only.
    pub fn from_diag(flags: &[f64; 2]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..2)
            .filter(|&i| flags[i] != 0.0)
            .map(|i| {
                let mut r = vec![0.0; 2];
                r[i] = flags[i];
                r
            })
            .collect();
        if rows.is_empty() {
            return Err(Error::Argument("observation map selects nothing".into()));
        }
        Ok(ObservationMap { c: Mat2::from_rows(&rows)? })
    }

    pub fn position() -> Self {
        Self::from_diag(&[1.0, 0.0]).expect("nonempty selection")
    }

    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }

    pub fn observe(&self, s: &PlantState) -> Vec<f64> {
        self.c.mul_vec(&[s.x0, s.x1]).expect("2-column map")
    }
}

/// State derivative under specific force `u` (N/kg).
pub fn msd_deriv(s: &PlantState, u: f64, p: &MsdParams) -> (f64, f64) {
    (s.x1, -(p.k / p.m) * s.x0 - (p.c / p.m) * s.x1 + u)
}

/// One classical RK4 step with `u` held constant.
pub fn integrate(s: &PlantState, u: f64, p: &MsdParams, dt: f64) -> PlantState {
    let at = |dx0: f64, dx1: f64, h: f64| PlantState {
        x0: s.x0 + h * dx0,
        x1: s.x1 + h * dx1,
        t: s.t + h,
    };
    let k1 = msd_deriv(s, u, p);
    let k2 = msd_deriv(&at(k1.0, k1.1, dt / 2.0), u, p);
    let k3 = msd_deriv(&at(k2.0, k2.1, dt / 2.0), u, p);
    let k4 = msd_deriv(&at(k3.0, k3.1, dt), u, p);
    PlantState {
        x0: s.x0 + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        x1: s.x1 + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        t: s.t + dt,
    }
}

/// Advances by `duration` in substeps no longer than `max_dt`.
pub fn integrate_span(s: &PlantState, u: f64, p: &MsdParams, duration: f64, max_dt: f64) -> PlantState {
    let steps = ((duration / max_dt) - 1e-9).ceil().max(1.0) as usize;
    let h = duration / steps as f64;
    let mut cur = *s;
    for _ in 0..steps {
        cur = integrate(&cur, u, p, h);
    }
    cur
}

pub fn synth_forcing(t: f64) -> f64 {
    1000.0 * t.sin() * t.cos()
}

/// Rollout under the synthetic forcing. Row `k` holds the state at `t_k` and
/// the input applied over `[t_k, t_k + dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MsdDataset {
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
}

impl MsdDataset {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Inputs and measured outputs as a log ready for windowing.
    pub fn to_raw_log(&self, obs: &ObservationMap) -> Result<RawLog> {
        let q = self.len();
        let n = obs.output_dim();
        let mut y = Vec::with_capacity(q * n);
        for k in 0..q {
            y.extend(obs.observe(&PlantState { x0: self.x0[k], x1: self.x1[k], t: self.t[k] }));
        }
        let dt = if q > 1 { self.t[1] - self.t[0] } else { 1.0 };
        RawLog::new(Mat2::new(q, 1, self.u.clone())?, Mat2::new(q, n, y)?, None, dt)
    }
}

pub fn generate_msd_dataset(p: &MsdParams, t_end: f64, dt: f64) -> Result<MsdDataset> {
    p.validate()?;
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::Argument(format!("need dt > 0 and t_end >= 0, got {dt}, {t_end}")));
    }
    let steps = (t_end / dt + 1e-9).floor() as usize;
    let mut out = MsdDataset {
        t: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        x0: Vec::with_capacity(steps + 1),
        x1: Vec::with_capacity(steps + 1),
    };
    let mut s = PlantState::default();
    for k in 0..=steps {
        // time from the step index so long rollouts do not accumulate drift
        s.t = k as f64 * dt;
        let u = synth_forcing(s.t);
        out.t.push(s.t);
        out.u.push(u);
        out.x0.push(s.x0);
        out.x1.push(s.x1);
        s = integrate(&s, u, p, dt);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    #[serde(rename = "Kp")]
    pub kp: f64,
    #[serde(rename = "Ki")]
    pub ki: f64,
    #[serde(rename = "Kd")]
    pub kd: f64,
    #[serde(default = "default_clamp")]
    pub integral_clamp: f64,
}

fn default_clamp() -> f64 {
    1e3
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            kp: 1.93,
            ki: 4.01,
            kd: 5.99,
            integral_clamp: default_clamp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

pub fn pid_step(g: &PidGains, e: f64, dt: f64, state: &mut PidState) -> f64 {
    state.integral = (state.integral + e * dt).clamp(-g.integral_clamp, g.integral_clamp);
    let de = state.prev_error.map_or(0.0, |prev| (e - prev) / dt);
    state.prev_error = Some(e);
    g.kp * e + g.ki * state.integral + g.kd * de
}
