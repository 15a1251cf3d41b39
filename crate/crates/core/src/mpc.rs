//! Newton-Raphson model predictive control over a learned forward model.
//!
//! All quantities are in the network's normalized units. The decision
//! variable is the `Nc x m` plan `U`, flattened row-major (time-major,
//! actuator-minor) wherever a vector is needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lu_factor, lu_solve, roll, Mat2};
use crate::nn::{fd_derivatives, reduce_to_du, ModelSpec};

/// Weight matrix as written in a config file: a diagonal or a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl WeightSpec {
    fn to_mat(&self) -> Result<Mat2> {
        match self {
            WeightSpec::Diagonal(d) if d.is_empty() => Err(Error::Argument("empty weight".into())),
            WeightSpec::Diagonal(d) => Ok(Mat2::diag(d)),
            WeightSpec::Full(rows) => Mat2::from_rows(rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControllerFile {
    #[serde(rename = "N")]
    horizon: usize,
    #[serde(rename = "N1", default)]
    n1: Option<usize>,
    #[serde(rename = "N2", default)]
    n2: Option<usize>,
    #[serde(rename = "Nc", default)]
    nc: Option<usize>,
    n_d: usize,
    d_d: usize,
    m: usize,
    n: usize,
    #[serde(default)]
    w: usize,
    #[serde(rename = "Q")]
    q: WeightSpec,
    #[serde(rename = "Lambda")]
    lambda: WeightSpec,
    s: f64,
    b: f64,
    r: f64,
    #[serde(default = "default_eps")]
    eps: f64,
    #[serde(default = "default_max_iters")]
    max_iters: usize,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default)]
    u_neutral: Option<Vec<f64>>,
}

fn default_eps() -> f64 {
    1e-3
}

fn default_max_iters() -> usize {
    3
}

fn default_tol() -> f64 {
    1e-4
}

/// Controller tunings. `n1`/`n2` are 1-based prediction steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ControllerFile", into = "ControllerFile")]
pub struct ControllerConfig {
    pub horizon: usize,
    pub n1: usize,
    pub n2: usize,
    pub nc: usize,
    pub n_d: usize,
    pub d_d: usize,
    pub m: usize,
    pub n: usize,
    pub w: usize,
    pub q: Mat2,
    pub lambda: Mat2,
    pub s: f64,
    pub b: f64,
    pub r: f64,
    pub eps: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub u_neutral: Vec<f64>,
}

impl TryFrom<ControllerFile> for ControllerConfig {
    type Error = Error;

    fn try_from(f: ControllerFile) -> Result<Self> {
        let cfg = ControllerConfig {
            horizon: f.horizon,
            n1: f.n1.unwrap_or(1),
            n2: f.n2.unwrap_or(f.horizon),
            nc: f.nc.unwrap_or(f.horizon),
            n_d: f.n_d,
            d_d: f.d_d,
            m: f.m,
            n: f.n,
            w: f.w,
            q: f.q.to_mat()?,
            lambda: f.lambda.to_mat()?,
            s: f.s,
            b: f.b,
            r: f.r,
            eps: f.eps,
            max_iters: f.max_iters,
            tol: f.tol,
            u_neutral: f.u_neutral.unwrap_or_else(|| vec![f.b; f.m]),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<ControllerConfig> for ControllerFile {
    fn from(c: ControllerConfig) -> Self {
        ControllerFile {
            horizon: c.horizon,
            n1: Some(c.n1),
            n2: Some(c.n2),
            nc: Some(c.nc),
            n_d: c.n_d,
            d_d: c.d_d,
            m: c.m,
            n: c.n,
            w: c.w,
            q: WeightSpec::Full(c.q.to_rows()),
            lambda: WeightSpec::Full(c.lambda.to_rows()),
            s: c.s,
            b: c.b,
            r: c.r,
            eps: c.eps,
            max_iters: c.max_iters,
            tol: c.tol,
            u_neutral: Some(c.u_neutral),
        }
    }
}

impl ControllerConfig {
    /// Single-step tuning used for the mass-spring-damper task.
    pub fn msd_default() -> Self {
        ControllerConfig {
            horizon: 1,
            n1: 1,
            n2: 1,
            nc: 1,
            n_d: 2,
            d_d: 2,
            m: 1,
            n: 1,
            w: 0,
            q: Mat2::identity(1),
            lambda: Mat2::identity(1),
            s: 1e-20,
            b: 1e-5,
            r: 4e2,
            eps: 1e-3,
            max_iters: 3,
            tol: 1e-4,
            u_neutral: vec![1e-5],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.n_d * self.m + self.d_d * self.n + self.w
    }

    pub fn plan_dim(&self) -> usize {
        self.nc * self.m
    }

    /// Open barrier interval `(b - r/2, b + r/2)`.
    pub fn domain(&self) -> (f64, f64) {
        (self.b - self.r / 2.0, self.b + self.r / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(msg));
        if self.horizon == 0 || self.nc == 0 || self.n_d == 0 || self.d_d == 0 || self.m == 0 || self.n == 0 {
            return bad("N, Nc, n_d, d_d, m and n must be at least 1".into());
        }
        if !(1 <= self.n1 && self.n1 <= self.n2 && self.n2 <= self.horizon) {
            return bad(format!("need 1 <= N1 <= N2 <= N, got {}, {}, {}", self.n1, self.n2, self.horizon));
        }
        if self.nc > self.horizon {
            return bad(format!("Nc = {} exceeds N = {}", self.nc, self.horizon));
        }
        if self.q.shape() != (self.n, self.n) || !self.q.is_symmetric(1e-12) {
            return bad(format!("Q must be a symmetric {0}x{0} matrix", self.n));
        }
        if self.lambda.shape() != (self.m, self.m) || !self.lambda.is_symmetric(1e-12) {
            return bad(format!("Lambda must be a symmetric {0}x{0} matrix", self.m));
        }
        if !(self.s > 0.0 && self.r > 0.0 && self.eps > 0.0 && self.tol >= 0.0 && self.b.is_finite()) {
            return bad("need s > 0, r > 0, eps > 0, tol >= 0".into());
        }
        let (lo, hi) = self.domain();
        if self.u_neutral.len() != self.m || self.u_neutral.iter().any(|u| !(*u > lo && *u < hi)) {
            return bad(format!("u_neutral must have {} entries inside ({lo}, {hi})", self.m));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlState {
    /// `[tau | alpha | l]`, most recent block first in each history.
    pub x_inputs: Vec<f64>,
    /// Current plan, `Nc x m`.
    pub plan: Mat2,
    /// Output written into the alpha head on the next step.
    pub last_y: Vec<f64>,
    /// Input applied on the previous step.
    pub last_u: Vec<f64>,
}

impl ControlState {
    pub fn new(cfg: &ControllerConfig) -> Self {
        let mut plan = Mat2::zeros(cfg.nc, cfg.m);
        for h in 0..cfg.nc {
            plan.row_mut(h).copy_from_slice(&cfg.u_neutral);
        }
        ControlState {
            x_inputs: vec![0.0; cfg.input_dim()],
            plan,
            last_y: vec![0.0; cfg.n],
            last_u: cfg.u_neutral.clone(),
        }
    }

    fn check(&self, cfg: &ControllerConfig) -> Result<()> {
        if self.x_inputs.len() != cfg.input_dim()
            || self.plan.shape() != (cfg.nc, cfg.m)
            || self.last_y.len() != cfg.n
            || self.last_u.len() != cfg.m
        {
            return Err(Error::dim("control state does not match the controller configuration"));
        }
        Ok(())
    }
}

fn tau_end(cfg: &ControllerConfig) -> usize {
    cfg.n_d * cfg.m - 1
}

fn alpha_range(cfg: &ControllerConfig) -> (usize, usize) {
    let start = cfg.n_d * cfg.m;
    (start, start + cfg.d_d * cfg.n - 1)
}

fn push_tau(x: &mut [f64], cfg: &ControllerConfig, u: &[f64]) -> Result<()> {
    roll(x, 0, tau_end(cfg), cfg.m)?;
    x[..cfg.m].copy_from_slice(u);
    Ok(())
}

fn push_alpha(x: &mut [f64], cfg: &ControllerConfig, y: &[f64]) -> Result<()> {
    let (start, end) = alpha_range(cfg);
    roll(x, start, end, cfg.n)?;
    x[start..start + cfg.n].copy_from_slice(y);
    Ok(())
}

/// Shifts the histories in place and writes the newest input, output and
/// sensor reading.
pub fn build_input_vector(
    state: &mut ControlState,
    cfg: &ControllerConfig,
    u_t: &[f64],
    y_prev: &[f64],
    l_t: &[f64],
) -> Result<()> {
    state.check(cfg)?;
    if u_t.len() != cfg.m || y_prev.len() != cfg.n || l_t.len() != cfg.w {
        return Err(Error::dim(format!(
            "expected u/y/l of lengths {}/{}/{}, got {}/{}/{}",
            cfg.m,
            cfg.n,
            cfg.w,
            u_t.len(),
            y_prev.len(),
            l_t.len()
        )));
    }
    push_tau(&mut state.x_inputs, cfg, u_t)?;
    push_alpha(&mut state.x_inputs, cfg, y_prev)?;
    let p = cfg.input_dim();
    state.x_inputs[p - cfg.w..].copy_from_slice(l_t);
    let outside = ModelSpec::out_of_range_inputs(&state.x_inputs);
    if outside > 0 {
        log::warn!("{outside} network inputs outside the normalized range");
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonPrediction {
    /// `N x n`; row `j` is the output after `j+1` model calls.
    pub yhat: Mat2,
    /// `N x m`; row `j` is the plan row consumed by call `j`.
    pub inputs_used: Mat2,
    /// Network input of the first call.
    pub first_input: Vec<f64>,
}

/// Recursive rollout of `plan` from the input vector `x_start`.
pub fn rollout(model: &ModelSpec, x_start: &[f64], plan: &Mat2, cfg: &ControllerConfig) -> Result<HorizonPrediction> {
    if x_start.len() != cfg.input_dim() || plan.shape() != (cfg.nc, cfg.m) {
        return Err(Error::dim("rollout input or plan does not match the configuration"));
    }
    let mut x = x_start.to_vec();
    let mut yhat = Mat2::zeros(cfg.horizon, cfg.n);
    let mut used = Mat2::zeros(cfg.horizon, cfg.m);
    let mut first_input = Vec::new();
    for j in 0..cfg.horizon {
        let h = j.min(cfg.nc - 1);
        push_tau(&mut x, cfg, plan.row(h))?;
        if j > 0 {
            let prev = yhat.row(j - 1).to_vec();
            push_alpha(&mut x, cfg, &prev)?;
        } else {
            first_input = x.clone();
        }
        let y = model.forward(&x)?;
        if y.len() != cfg.n {
            return Err(Error::dim(format!("model returns {} outputs, controller expects {}", y.len(), cfg.n)));
        }
        yhat.row_mut(j).copy_from_slice(&y);
        used.row_mut(j).copy_from_slice(plan.row(h));
    }
    Ok(HorizonPrediction {
        yhat,
        inputs_used: used,
        first_input,
    })
}

pub fn predict_horizon(model: &ModelSpec, state: &ControlState, cfg: &ControllerConfig) -> Result<HorizonPrediction> {
    state.check(cfg)?;
    rollout(model, &state.x_inputs, &state.plan, cfg)
}

fn barrier_terms(u: f64, cfg: &ControllerConfig) -> (f64, f64) {
    (u + cfg.r / 2.0 - cfg.b, cfg.r / 2.0 + cfg.b - u)
}

fn check_domain(plan: &Mat2, cfg: &ControllerConfig) -> Result<()> {
    let (lo, hi) = cfg.domain();
    for h in 0..plan.rows() {
        for a in 0..plan.cols() {
            let u = plan[(h, a)];
            let (p, q) = barrier_terms(u, cfg);
            if !(p > 0.0 && q > 0.0) {
                return Err(Error::BarrierDomain { row: h, col: a, value: u, lo, hi });
            }
        }
    }
    Ok(())
}

pub fn barrier(u: f64, cfg: &ControllerConfig) -> f64 {
    let (p, q) = barrier_terms(u, cfg);
    cfg.s / p + cfg.s / q - 4.0 / cfg.r
}

pub fn barrier_d1(u: f64, cfg: &ControllerConfig) -> f64 {
    let (p, q) = barrier_terms(u, cfg);
    -cfg.s / (p * p) + cfg.s / (q * q)
}

pub fn barrier_d2(u: f64, cfg: &ControllerConfig) -> f64 {
    let (p, q) = barrier_terms(u, cfg);
    2.0 * cfg.s / (p * p * p) + 2.0 * cfg.s / (q * q * q)
}

fn quad(m: &Mat2, v: &[f64]) -> f64 {
    let mv = m.mul_vec(v).expect("square weight");
    v.iter().zip(&mv).map(|(a, b)| a * b).sum()
}

fn delta_u(plan: &Mat2, u_prev: &[f64], j: usize) -> Vec<f64> {
    let prev = if j == 0 { u_prev } else { plan.row(j - 1) };
    plan.row(j).iter().zip(prev).map(|(a, b)| a - b).collect()
}

fn check_problem(yhat: &Mat2, yref: &Mat2, plan: &Mat2, u_prev: &[f64], cfg: &ControllerConfig) -> Result<()> {
    if yhat.rows() < cfg.n2 || yhat.cols() != cfg.n {
        return Err(Error::dim(format!("predictions are {:?}, need at least {} rows of {}", yhat.shape(), cfg.n2, cfg.n)));
    }
    if yref.rows() < cfg.n2 || yref.cols() != cfg.n {
        return Err(Error::dim(format!("reference is {:?}, need at least {} rows of {}", yref.shape(), cfg.n2, cfg.n)));
    }
    if plan.shape() != (cfg.nc, cfg.m) || u_prev.len() != cfg.m {
        return Err(Error::dim("plan or previous input has the wrong shape"));
    }
    Ok(())
}

/// Tracking error over the costed window, smoothness over the control
/// horizon (with `U_{-1} = u_prev`) and the barrier on every plan entry.
pub fn cost(yhat: &Mat2, yref: &Mat2, plan: &Mat2, u_prev: &[f64], cfg: &ControllerConfig) -> Result<f64> {
    check_problem(yhat, yref, plan, u_prev, cfg)?;
    check_domain(plan, cfg)?;
    let mut j_total = 0.0;
    for j in cfg.n1 - 1..cfg.n2 {
        let e: Vec<f64> = yref.row(j).iter().zip(yhat.row(j)).map(|(r, y)| r - y).collect();
        j_total += quad(&cfg.q, &e);
    }
    for j in 0..cfg.nc {
        j_total += quad(&cfg.lambda, &delta_u(plan, u_prev, j));
    }
    j_total += plan.as_slice().iter().map(|u| barrier(*u, cfg)).sum::<f64>();
    Ok(j_total)
}

/// `d(Delta u_j) / d U_h`: `delta(h, j) - delta(h, j-1)`.
pub fn delta_u_jacobian(h: usize, j: usize) -> f64 {
    let kron = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    kron(h, j) - if j == 0 { 0.0 } else { kron(h, j - 1) }
}

/// Block-summed network sensitivity to the plan, `n x m` each.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    /// First derivative.
    pub d: Mat2,
    /// Diagonal second derivative.
    pub c: Mat2,
}

/// Finite-difference sensitivity of the network at input `x`, taken over
/// the input-history rows and summed across history blocks.
pub fn sensitivity(model: &ModelSpec, x: &[f64], cfg: &ControllerConfig) -> Result<Sensitivity> {
    let fd = fd_derivatives(model, x, cfg.eps, cfg.n_d * cfg.m)?;
    Ok(Sensitivity {
        d: reduce_to_du(&fd.theta, cfg.n_d, cfg.m)?,
        c: reduce_to_du(&fd.chi, cfg.n_d, cfg.m)?,
    })
}

/// Second-order prediction model around an anchor plan: for step `j` with
/// plan row `h = min(j, Nc-1)` and `d = U_h - anchor_h`,
/// `yhat_j(U) = yhat0_j + D d + C d^2 / 2` (elementwise in `d`).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    pub anchor: Mat2,
    pub yhat0: Mat2,
    pub sens: Sensitivity,
}

impl LocalModel {
    fn offset(&self, plan: &Mat2, h: usize) -> Vec<f64> {
        plan.row(h).iter().zip(self.anchor.row(h)).map(|(u, a)| u - a).collect()
    }

    /// `dyhat_j / dU_h` at the plan, `n x m`.
    fn slope(&self, delta: &[f64]) -> Mat2 {
        let mut g = self.sens.d.clone();
        for k in 0..g.rows() {
            for (a, da) in delta.iter().enumerate() {
                g[(k, a)] += self.sens.c[(k, a)] * da;
            }
        }
        g
    }

    pub fn predict(&self, plan: &Mat2, cfg: &ControllerConfig) -> Mat2 {
        let mut y = self.yhat0.clone();
        for j in 0..cfg.horizon {
            let d = self.offset(plan, j.min(cfg.nc - 1));
            for k in 0..cfg.n {
                for (a, da) in d.iter().enumerate() {
                    y[(j, k)] += self.sens.d[(k, a)] * da + 0.5 * self.sens.c[(k, a)] * da * da;
                }
            }
        }
        y
    }

    pub fn cost(&self, yref: &Mat2, plan: &Mat2, u_prev: &[f64], cfg: &ControllerConfig) -> Result<f64> {
        cost(&self.predict(plan, cfg), yref, plan, u_prev, cfg)
    }
}

fn weighted_error(yhat: &Mat2, yref: &Mat2, j: usize, cfg: &ControllerConfig) -> Vec<f64> {
    let e: Vec<f64> = yref.row(j).iter().zip(yhat.row(j)).map(|(r, y)| r - y).collect();
    cfg.q.mul_vec(&e).expect("square weight")
}

/// Gradient of the cost with respect to the plan, `Nc x m`.
pub fn cost_jacobian(local: &LocalModel, yref: &Mat2, plan: &Mat2, u_prev: &[f64], cfg: &ControllerConfig) -> Result<Mat2> {
    let yhat = local.predict(plan, cfg);
    check_problem(&yhat, yref, plan, u_prev, cfg)?;
    check_domain(plan, cfg)?;
    let mut grad = Mat2::zeros(cfg.nc, cfg.m);
    for j in cfg.n1 - 1..cfg.n2 {
        let h = j.min(cfg.nc - 1);
        let qe = weighted_error(&yhat, yref, j, cfg);
        let g = local.slope(&local.offset(plan, h));
        for a in 0..cfg.m {
            let s: f64 = (0..cfg.n).map(|k| qe[k] * g[(k, a)]).sum();
            grad[(h, a)] -= 2.0 * s;
        }
    }
    for j in 0..cfg.nc {
        let ldu = cfg.lambda.mul_vec(&delta_u(plan, u_prev, j))?;
        for h in j.saturating_sub(1)..=j {
            let dj = delta_u_jacobian(h, j);
            if dj != 0.0 {
                for a in 0..cfg.m {
                    grad[(h, a)] += 2.0 * ldu[a] * dj;
                }
            }
        }
    }
    for h in 0..cfg.nc {
        for a in 0..cfg.m {
            grad[(h, a)] += barrier_d1(plan[(h, a)], cfg);
        }
    }
    Ok(grad)
}

/// Hessian of the cost over the flattened plan, `(Nc m) x (Nc m)`.
pub fn cost_hessian(local: &LocalModel, yref: &Mat2, plan: &Mat2, u_prev: &[f64], cfg: &ControllerConfig) -> Result<Mat2> {
    let yhat = local.predict(plan, cfg);
    check_problem(&yhat, yref, plan, u_prev, cfg)?;
    check_domain(plan, cfg)?;
    let (m, dim) = (cfg.m, cfg.plan_dim());
    let mut hess = Mat2::zeros(dim, dim);
    for j in cfg.n1 - 1..cfg.n2 {
        let h = j.min(cfg.nc - 1);
        let qe = weighted_error(&yhat, yref, j, cfg);
        let g = local.slope(&local.offset(plan, h));
        for a in 0..m {
            for c in 0..m {
                // G^T Q G
                let mut s = 0.0;
                for k in 0..cfg.n {
                    for l in 0..cfg.n {
                        s += g[(k, a)] * cfg.q[(k, l)] * g[(l, c)];
                    }
                }
                if a == c {
                    s -= (0..cfg.n).map(|k| qe[k] * local.sens.c[(k, a)]).sum::<f64>();
                }
                hess[(h * m + a, h * m + c)] += 2.0 * s;
            }
        }
    }
    for j in 0..cfg.nc {
        for h in j.saturating_sub(1)..=j {
            for g in j.saturating_sub(1)..=j {
                let w = delta_u_jacobian(h, j) * delta_u_jacobian(g, j);
                if w == 0.0 {
                    continue;
                }
                for a in 0..m {
                    for c in 0..m {
                        hess[(h * m + a, g * m + c)] += 2.0 * cfg.lambda[(a, c)] * w;
                    }
                }
            }
        }
    }
    for (i, u) in plan.as_slice().iter().enumerate() {
        hess[(i, i)] += barrier_d2(*u, cfg);
    }
    Ok(hess)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonResult {
    pub plan: Mat2,
    pub iters: usize,
    /// Infinity norm of the last applied step.
    pub residual: f64,
    /// Cost of the true rollout before the first iteration and after each one.
    pub costs: Vec<f64>,
    /// Rollout at the returned plan.
    pub prediction: HorizonPrediction,
}

/// Pulls every plan entry at least `1e-6 r` inside the barrier interval.
pub fn clamp_plan(plan: &mut Mat2, cfg: &ControllerConfig) {
    let (lo, hi) = cfg.domain();
    let margin = 1e-6 * cfg.r;
    for u in plan.as_mut_slice() {
        *u = u.clamp(lo + margin, hi - margin);
    }
}

fn solve_newton(hess: &Mat2, grad: &[f64]) -> Result<Vec<f64>> {
    let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
    match lu_factor(hess) {
        Ok(f) => lu_solve(&f, &rhs),
        Err(Error::SingularMatrix { .. }) => {
            let dim = hess.rows();
            let mut lambda = 1e-6 * hess.trace() / dim as f64;
            if !(lambda > 0.0) {
                lambda = 1e-6;
            }
            log::debug!("singular Hessian, retrying with damping {lambda:.3e}");
            let damped = hess.add(&Mat2::identity(dim).scale(lambda))?;
            lu_solve(&lu_factor(&damped)?, &rhs)
        }
        Err(e) => Err(e),
    }
}

/// Largest step fraction in `(0, 1]` that keeps the plan strictly inside the
/// barrier interval.
fn step_fraction(plan: &[f64], step: &[f64], cfg: &ControllerConfig) -> f64 {
    let (lo, hi) = cfg.domain();
    let mut alpha: f64 = 1.0;
    for (u, d) in plan.iter().zip(step) {
        let room = if *d > 0.0 {
            hi - u
        } else if *d < 0.0 {
            lo - u
        } else {
            continue;
        };
        let reach = room / d;
        if reach <= 1.0 {
            alpha = alpha.min(0.99 * reach);
        }
    }
    alpha
}

/// Newton iterations on the plan starting from `x_start`'s histories and the
/// plan in `state`. The network sensitivity is taken once, at the first
/// rollout input of the starting plan, and reused by every iteration.
pub fn newton_step(
    model: &ModelSpec,
    state: &ControlState,
    yref: &Mat2,
    cfg: &ControllerConfig,
) -> Result<NewtonResult> {
    state.check(cfg)?;
    let mut plan = state.plan.clone();
    clamp_plan(&mut plan, cfg);
    let mut pred = rollout(model, &state.x_inputs, &plan, cfg)?;
    let sens = sensitivity(model, &pred.first_input, cfg)?;
    if !sens.d.all_finite() || !sens.c.all_finite() {
        return Err(Error::Numerics("network sensitivity".into()));
    }
    let mut costs = vec![cost(&pred.yhat, yref, &plan, &state.last_u, cfg)?];
    let mut iters = 0;
    let mut residual = 0.0;
    while iters < cfg.max_iters {
        let local = LocalModel {
            anchor: plan.clone(),
            yhat0: pred.yhat.clone(),
            sens: sens.clone(),
        };
        let grad = cost_jacobian(&local, yref, &plan, &state.last_u, cfg)?;
        let hess = cost_hessian(&local, yref, &plan, &state.last_u, cfg)?;
        if !grad.all_finite() || !hess.all_finite() {
            return Err(Error::Numerics("cost derivatives".into()));
        }
        let mut step = solve_newton(&hess, grad.as_slice())?;
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerics("Newton step".into()));
        }
        let alpha = step_fraction(plan.as_slice(), &step, cfg);
        step.iter_mut().for_each(|v| *v *= alpha);
        for (u, d) in plan.as_mut_slice().iter_mut().zip(&step) {
            *u += d;
        }
        iters += 1;
        residual = step.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        pred = rollout(model, &state.x_inputs, &plan, cfg)?;
        let j = cost(&pred.yhat, yref, &plan, &state.last_u, cfg)?;
        if !j.is_finite() {
            return Err(Error::Numerics("cost".into()));
        }
        costs.push(j);
        if residual < cfg.tol {
            break;
        }
    }
    Ok(NewtonResult {
        plan,
        iters,
        residual,
        costs,
        prediction: pred,
    })
}

/// One receding-horizon step: update the histories, optimize the plan,
/// apply its first row and warm-start the next step with the shifted plan.
pub fn control_step(
    model: &ModelSpec,
    state: &mut ControlState,
    cfg: &ControllerConfig,
    yref: &Mat2,
    l_t: &[f64],
) -> Result<NewtonResult> {
    let (u, y) = (state.last_u.clone(), state.last_y.clone());
    build_input_vector(state, cfg, &u, &y, l_t)?;
    let result = newton_step(model, state, yref, cfg)?;
    state.last_u = result.plan.row(0).to_vec();
    state.last_y = result.prediction.yhat.row(0).to_vec();
    for h in 0..cfg.nc {
        let src = (h + 1).min(cfg.nc - 1);
        let row = result.plan.row(src).to_vec();
        state.plan.row_mut(h).copy_from_slice(&row);
    }
    Ok(result)
}

/// A model bound to a configuration and its running state.
#[derive(Debug, Clone)]
pub struct Controller {
    pub model: ModelSpec,
    pub cfg: ControllerConfig,
    pub state: ControlState,
}

impl Controller {
    pub fn new(model: ModelSpec, cfg: ControllerConfig) -> Result<Self> {
        cfg.validate()?;
        if model.input_dim != cfg.input_dim() || model.output_dim != cfg.n {
            return Err(Error::ModelShape(format!(
                "model is {} -> {}, controller needs {} -> {}",
                model.input_dim,
                model.output_dim,
                cfg.input_dim(),
                cfg.n
            )));
        }
        let state = ControlState::new(&cfg);
        Ok(Controller { model, cfg, state })
    }

    /// Overrides the output written into the history on the next step, e.g.
    /// with a measurement.
    pub fn observe(&mut self, y: &[f64]) -> Result<()> {
        if y.len() != self.cfg.n {
            return Err(Error::dim(format!("expected {} outputs, got {}", self.cfg.n, y.len())));
        }
        self.state.last_y.copy_from_slice(y);
        Ok(())
    }

    pub fn step(&mut self, yref: &Mat2, l_t: &[f64]) -> Result<NewtonResult> {
        control_step(&self.model, &mut self.state, &self.cfg, yref, l_t)
    }
}

#[cfg(test)]
mod tests;
