//! Closed-loop simulation of the two plants under PID or MPC.

use std::time::Instant;

use anyhow::{bail, Context};
use nnmpc::datapipe::{ColumnScaler, RawLog};
use nnmpc::mpc::{Controller, ControllerConfig};
use nnmpc::nn::{Activation, Layer, ModelSpec};
use nnmpc::paths::{path_point, PathParams};
use nnmpc::plant::{integrate_span, pid_step, ObservationMap, PidState, PlantState};
use nnmpc::Mat2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ControllerKind, PlantKind, RunConfig, SynthConfig};

/// One control period. `y` is measured at `t`, before `u` is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub t: f64,
    pub yref: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    /// Final cost of the MPC solve, in normalized units.
    pub cost: Option<f64>,
    pub iters: Option<usize>,
    /// Wall-clock seconds spent in the controller.
    pub solve_time: f64,
}

#[derive(Debug, Clone)]
pub struct SimRun {
    pub plant: PlantKind,
    pub controller: ControllerKind,
    pub dt: f64,
    pub path: PathParams,
    pub param_count: Option<usize>,
    pub rows: Vec<StepLog>,
}

impl SimRun {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn output(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.y[i]).collect()
    }

    pub fn errors(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| r.y.iter().zip(&r.yref).map(|(y, yr)| y - yr).collect())
            .collect()
    }
}

fn steps_for(cfg: &RunConfig, path: &PathParams, dt: f64) -> usize {
    let t_final = cfg.sim.t_final.unwrap_or_else(|| path.duration());
    (t_final / dt + 1e-9).floor() as usize
}

/// Normalized reference rows `path(t + (j+1) dt)` for the horizon.
fn reference_rows(path: &PathParams, t: f64, dt: f64, horizon: usize, scale: &ColumnScaler) -> anyhow::Result<Mat2> {
    let mut rows = Vec::with_capacity(horizon);
    for j in 0..horizon {
        rows.push(scale.apply_row(&path_point(path, t + (j + 1) as f64 * dt)?));
    }
    Ok(Mat2::from_rows(&rows)?)
}

fn scalers(model: &ModelSpec, cfg: &ControllerConfig) -> (ColumnScaler, ColumnScaler) {
    match &model.normalization {
        Some(n) => (n.actuator_scaler(cfg.m), n.outputs()),
        None => (ColumnScaler::identity(cfg.m), ColumnScaler::identity(cfg.n)),
    }
}

fn controller_for(model: ModelSpec, cfg: ControllerConfig) -> anyhow::Result<Controller> {
    if cfg.w != 0 {
        bail!("simulated plants have no sensor channels; set w = 0");
    }
    Ok(Controller::new(model, cfg)?)
}

pub fn simulate_msd_mpc(cfg: &RunConfig, model: ModelSpec, path: &PathParams) -> anyhow::Result<SimRun> {
    let ccfg = cfg.controller_for(PlantKind::Msd);
    let dt = cfg.sim.control_dt;
    let (u_scale, y_scale) = scalers(&model, &ccfg);
    let param_count = model.param_count();
    let mut ctl = controller_for(model, ccfg)?;
    let obs = ObservationMap::position();
    let mut state = PlantState::default();
    let mut rows = Vec::new();
    for k in 0..steps_for(cfg, path, dt) {
        let t = k as f64 * dt;
        let y = obs.observe(&state);
        let yref = reference_rows(path, t, dt, ctl.cfg.horizon, &y_scale)?;
        if cfg.sim.feedback {
            ctl.observe(&y_scale.apply_row(&y))?;
        }
        let start = Instant::now();
        let res = ctl.step(&yref, &[]).with_context(|| format!("controller failed at t = {t}"))?;
        let solve_time = start.elapsed().as_secs_f64();
        let u = u_scale.invert_row(res.plan.row(0));
        rows.push(StepLog {
            t,
            yref: path_point(path, t)?,
            y,
            u: u.clone(),
            cost: res.costs.last().copied(),
            iters: Some(res.iters),
            solve_time,
        });
        state = integrate_span(&state, u[0], &cfg.plant, dt, cfg.sim.plant_dt);
        state.t = (k + 1) as f64 * dt;
    }
    Ok(SimRun {
        plant: PlantKind::Msd,
        controller: ControllerKind::Mpc,
        dt,
        path: path.clone(),
        param_count: Some(param_count),
        rows,
    })
}

pub fn simulate_msd_pid(cfg: &RunConfig, path: &PathParams) -> anyhow::Result<SimRun> {
    let dt = cfg.sim.control_dt;
    let obs = ObservationMap::position();
    let mut state = PlantState::default();
    let mut pid = PidState::default();
    let mut rows = Vec::new();
    for k in 0..steps_for(cfg, path, dt) {
        let t = k as f64 * dt;
        let y = obs.observe(&state);
        let yref = path_point(path, t)?;
        let start = Instant::now();
        let u = pid_step(&cfg.pid, yref[0] - y[0], dt, &mut pid);
        let solve_time = start.elapsed().as_secs_f64();
        rows.push(StepLog {
            t,
            yref,
            y,
            u: vec![u],
            cost: None,
            iters: None,
            solve_time,
        });
        state = integrate_span(&state, u, &cfg.plant, dt, cfg.sim.plant_dt);
        state.t = (k + 1) as f64 * dt;
    }
    Ok(SimRun {
        plant: PlantKind::Msd,
        controller: ControllerKind::Pid,
        dt,
        path: path.clone(),
        param_count: None,
        rows,
    })
}

/// The three-output plant: one dense tanh layer over
/// `[u_k, u_{k-1} | y_k, y_{k-1}]` with weight row blocks `B1, B2, A1, A2`.
/// A network of the same shape represents it exactly.
pub fn synth3_network(sc: &SynthConfig, seed: u64) -> anyhow::Result<ModelSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Mat2::zeros(12, 3);
    for i in 0..3 {
        for j in 0..3 {
            let mut sym = |s: f64| rng.gen_range(-s..=s);
            w[(i, j)] = if i == j { 1.0 } else { sym(sc.input_scale) };
            w[(3 + i, j)] = sym(sc.delayed_scale);
            w[(6 + i, j)] = sym(sc.feedback_scale);
            w[(9 + i, j)] = sym(sc.feedback_scale) * 0.5;
        }
    }
    Ok(ModelSpec::new(vec![Layer::dense(w, vec![0.0; 3], Activation::Tanh)?], None)?)
}

/// Input-output history of the synthetic plant, most recent first.
#[derive(Debug, Clone)]
struct Synth3State {
    u: [Vec<f64>; 2],
    y: [Vec<f64>; 2],
}

impl Synth3State {
    fn new() -> Self {
        let z = vec![0.0; 3];
        Synth3State {
            u: [z.clone(), z.clone()],
            y: [z.clone(), z],
        }
    }

    /// Applies `u` for one period and returns the next output.
    fn advance(&mut self, plant: &ModelSpec, u: &[f64]) -> anyhow::Result<Vec<f64>> {
        self.u = [u.to_vec(), self.u[0].clone()];
        let x: Vec<f64> = [&self.u[0], &self.u[1], &self.y[0], &self.y[1]].into_iter().flatten().copied().collect();
        let y = plant.forward(&x)?;
        self.y = [y.clone(), self.y[0].clone()];
        Ok(y)
    }
}

pub fn simulate_synth3(cfg: &RunConfig, plant: &ModelSpec, model: ModelSpec, path: &PathParams) -> anyhow::Result<SimRun> {
    let ccfg = cfg.controller_for(PlantKind::Synth3);
    let dt = cfg.synth.dt;
    let (u_scale, y_scale) = scalers(&model, &ccfg);
    let param_count = model.param_count();
    let mut ctl = controller_for(model, ccfg)?;
    let mut st = Synth3State::new();
    let mut rows = Vec::new();
    for k in 0..steps_for(cfg, path, dt) {
        let t = k as f64 * dt;
        let y = st.y[0].clone();
        let yref = reference_rows(path, t, dt, ctl.cfg.horizon, &y_scale)?;
        if cfg.sim.feedback {
            ctl.observe(&y_scale.apply_row(&y))?;
        }
        let start = Instant::now();
        let res = ctl.step(&yref, &[]).with_context(|| format!("controller failed at t = {t}"))?;
        let solve_time = start.elapsed().as_secs_f64();
        let u = u_scale.invert_row(res.plan.row(0));
        rows.push(StepLog {
            t,
            yref: path_point(path, t)?,
            y,
            u: u.clone(),
            cost: res.costs.last().copied(),
            iters: Some(res.iters),
            solve_time,
        });
        st.advance(plant, &u)?;
    }
    Ok(SimRun {
        plant: PlantKind::Synth3,
        controller: ControllerKind::Mpc,
        dt,
        path: path.clone(),
        param_count: Some(param_count),
        rows,
    })
}

/// Open-loop log of the synthetic plant under seeded uniform random inputs,
/// each held for a random number of periods.
pub fn generate_synth3_log(plant: &ModelSpec, sc: &SynthConfig, samples: usize, seed: u64) -> anyhow::Result<RawLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(7));
    let mut st = Synth3State::new();
    let (mut us, mut ys) = (Vec::with_capacity(samples * 3), Vec::with_capacity(samples * 3));
    let mut u = vec![0.0; 3];
    let mut hold = 0;
    for _ in 0..samples {
        if hold == 0 {
            u = (0..3).map(|_| rng.gen_range(-0.6..0.6)).collect();
            hold = rng.gen_range(1..20);
        }
        hold -= 1;
        ys.extend_from_slice(&st.y[0]);
        us.extend_from_slice(&u);
        st.advance(plant, &u)?;
    }
    Ok(RawLog::new(Mat2::new(samples, 3, us)?, Mat2::new(samples, 3, ys)?, None, sc.dt)?)
}

pub fn run(cfg: &RunConfig, plant: PlantKind, controller: ControllerKind, model: Option<ModelSpec>, path: &PathParams, seed: u64) -> anyhow::Result<SimRun> {
    match (plant, controller) {
        (PlantKind::Msd, ControllerKind::Pid) => simulate_msd_pid(cfg, path),
        (PlantKind::Msd, ControllerKind::Mpc) => {
            let model = model.context("MPC on the mass-spring-damper plant needs --model")?;
            simulate_msd_mpc(cfg, model, path)
        }
        (PlantKind::Synth3, ControllerKind::Mpc) => {
            let truth = synth3_network(&cfg.synth, seed)?;
            let model = model.unwrap_or_else(|| truth.clone());
            simulate_synth3(cfg, &truth, model, path)
        }
        (PlantKind::Synth3, ControllerKind::Pid) => bail!("the PID baseline is single-output; use --plant msd"),
    }
}
