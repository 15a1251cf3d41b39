//! Subcommand implementations. Each writes its artifacts under `out`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use nnmpc::datapipe::{downsample, fit_normalizer, window_dataset, RawLog};
use nnmpc::nn::{load_model, ModelSpec};
use nnmpc::paths::{PathKind, PathParams};
use nnmpc::plant::{generate_msd_dataset, ObservationMap};
use nnmpc::trainer::{train_mlp, TrainReport};
use serde::Serialize;

use crate::config::{ControllerKind, PlantKind, RunConfig};
use crate::csvio::{read_dataset_csv, write_dataset_csv, write_run_csv, write_timing_csv};
use crate::energy::{energy_display, energy_estimate};
use crate::report::{fit_line, summarize, timing, RunReport};
use crate::sim::{self, generate_synth3_log, synth3_network, SimRun};

/// An input file that does not exist. Mapped to exit code 2.
#[derive(Debug)]
pub struct MissingFile(pub PathBuf);

impl fmt::Display for MissingFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "file not found: {}", self.0.display())
    }
}

impl std::error::Error for MissingFile {}

fn require(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        return Err(MissingFile(path.to_path_buf()).into());
    }
    Ok(())
}

pub fn read_model(path: &Path) -> anyhow::Result<ModelSpec> {
    require(path)?;
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    load_model(&bytes).with_context(|| format!("loading model {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ensure_dir(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

pub fn dataset_log(cfg: &RunConfig, plant: PlantKind, seed: u64) -> anyhow::Result<RawLog> {
    match plant {
        PlantKind::Msd => {
            let data = generate_msd_dataset(&cfg.plant, cfg.gen.t_end, cfg.gen.dt)?;
            let log = data.to_raw_log(&ObservationMap::position())?;
            Ok(downsample(&log, cfg.gen.downsample)?)
        }
        PlantKind::Synth3 => {
            let net = synth3_network(&cfg.synth, seed)?;
            generate_synth3_log(&net, &cfg.synth, cfg.gen.samples, seed)
        }
    }
}

pub fn cmd_gen(cfg: &RunConfig, plant: PlantKind, seed: u64, out: &Path) -> anyhow::Result<PathBuf> {
    ensure_dir(out)?;
    let log = dataset_log(cfg, plant, seed)?;
    let path = out.join("dataset.csv");
    write_dataset_csv(&path, &log)?;
    log::info!("wrote {} rows to {}", log.len(), path.display());
    Ok(path)
}

/// Normalizes, windows and fits a network to a logged dataset. The window
/// depths come from the plant's controller configuration.
pub fn train_on_log(cfg: &RunConfig, plant: PlantKind, seed: u64, log: &RawLog) -> anyhow::Result<(ModelSpec, TrainReport)> {
    let ccfg = cfg.controller_for(plant);
    let scalers = fit_normalizer(log)?;
    let (x, y) = window_dataset(&scalers.apply(log)?, ccfg.n_d, ccfg.d_d)?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = seed;
    if let Some(last) = tcfg.layers.last_mut() {
        last.units = y.cols();
    }
    let (mut model, report) = train_mlp(&x, &y, &tcfg)?;
    model.normalization = Some(scalers.to_normalizer(ccfg.n_d, ccfg.d_d));
    Ok((model, report))
}

pub fn cmd_train(cfg: &RunConfig, plant: PlantKind, seed: u64, data: &Path, out: &Path) -> anyhow::Result<TrainReport> {
    require(data)?;
    ensure_dir(out)?;
    let log = read_dataset_csv(data)?;
    let (model, report) = train_on_log(cfg, plant, seed, &log)?;
    fs::write(out.join("model.json"), model.to_json() + "\n")?;
    write_json(&out.join("train_report.json"), &report)?;
    log::info!("test mse {:.3e} with {} parameters", report.last().test_mse, report.param_count);
    Ok(report)
}

pub fn write_run(run: &SimRun, out: &Path) -> anyhow::Result<RunReport> {
    ensure_dir(out)?;
    let report = summarize(run);
    write_run_csv(&out.join("run.csv"), run)?;
    write_json(&out.join("report.json"), &report)?;
    write_timing_csv(&out.join("timing.csv"), run)?;
    write_json(&out.join("timing.json"), &timing(run))?;
    Ok(report)
}

pub struct SimArgs<'a> {
    pub plant: PlantKind,
    pub controller: ControllerKind,
    pub path: Option<PathKind>,
    pub model: Option<&'a Path>,
    pub seed: u64,
}

pub fn simulate(cfg: &RunConfig, args: &SimArgs) -> anyhow::Result<SimRun> {
    let model = args.model.map(read_model).transpose()?;
    let path = cfg.path_for(args.plant, args.path)?;
    sim::run(cfg, args.plant, args.controller, model, &path, args.seed)
}

pub fn cmd_simulate(cfg: &RunConfig, args: &SimArgs, out: &Path) -> anyhow::Result<RunReport> {
    let run = simulate(cfg, args)?;
    write_run(&run, out)
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub pid: RunReport,
    pub mpc: RunReport,
}

/// Runs PID and MPC on the same reference and writes both reports.
pub fn cmd_compare(cfg: &RunConfig, path: Option<PathKind>, model: &Path, seed: u64, out: &Path) -> anyhow::Result<Comparison> {
    let mut reports = Vec::new();
    for (controller, dir) in [(ControllerKind::Pid, "pid"), (ControllerKind::Mpc, "mpc")] {
        let args = SimArgs {
            plant: PlantKind::Msd,
            controller,
            path,
            model: Some(model),
            seed,
        };
        reports.push(cmd_simulate(cfg, &args, &out.join(dir))?);
    }
    let mpc = reports.pop().unwrap();
    let pid = reports.pop().unwrap();
    let cmp = Comparison { pid, mpc };
    write_json(&out.join("compare.json"), &cmp)?;
    Ok(cmp)
}

#[derive(Debug, Serialize)]
pub struct BenchPoint {
    pub horizon: usize,
    pub mean_solve_s: f64,
    pub median_solve_s: f64,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub points: Vec<BenchPoint>,
    /// Fitted `solve_time = slope N + intercept`, seconds.
    pub slope_s: f64,
    pub intercept_s: f64,
}

/// Solve time against prediction horizon on the MSD task, `Nc = N`.
pub fn cmd_bench(cfg: &RunConfig, model: &Path, max_horizon: usize, t_final: f64, out: &Path) -> anyhow::Result<BenchReport> {
    let model = read_model(model)?;
    ensure_dir(out)?;
    let path: PathParams = cfg.path_for(PlantKind::Msd, Some(PathKind::Step))?;
    let mut points = Vec::new();
    for n in 1..=max_horizon.max(1) {
        let mut c = cfg.clone();
        let mut cc = cfg.controller_for(PlantKind::Msd);
        cc.horizon = n;
        cc.n2 = n;
        cc.nc = n;
        c.controller = Some(cc);
        c.sim.t_final = Some(t_final);
        let run = sim::simulate_msd_mpc(&c, model.clone(), &path)?;
        let t = timing(&run);
        points.push(BenchPoint {
            horizon: n,
            mean_solve_s: t.mean_s,
            median_solve_s: t.median_s,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.horizon as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_solve_s).collect();
    let (slope_s, intercept_s) = fit_line(&xs, &ys);
    let report = BenchReport {
        points,
        slope_s,
        intercept_s,
    };
    write_json(&out.join("bench.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct EnergyReport {
    pub params: usize,
    pub seconds: f64,
    pub model_uah: f64,
    pub display_uah: f64,
}

pub fn cmd_energy(params: usize, seconds: f64) -> EnergyReport {
    EnergyReport {
        params,
        seconds,
        model_uah: energy_estimate(params, seconds),
        display_uah: energy_display(params, seconds),
    }
}
