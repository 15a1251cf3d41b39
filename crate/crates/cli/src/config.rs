//! Run configuration, read from TOML or JSON.

use std::path::Path;

use anyhow::{bail, Context};
use nnmpc::mpc::ControllerConfig;
use nnmpc::paths::{step_sequence, PathKind, PathParams};
use nnmpc::plant::{MsdParams, PidGains};
use nnmpc::trainer::TrainConfig;
use nnmpc::Mat2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    Msd,
    Synth3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Pid,
    Mpc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Controller period, s.
    pub control_dt: f64,
    /// Integration substep, s.
    pub plant_dt: f64,
    /// Run length; the path's own duration when absent.
    pub t_final: Option<f64>,
    /// Feed measured outputs into the controller's output history.
    pub feedback: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            control_dt: 0.008,
            plant_dt: 0.001,
            t_final: None,
            feedback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub t_end: f64,
    pub dt: f64,
    /// Keep every n-th sample of the integration grid.
    pub downsample: usize,
    /// Synthetic plant only: number of random-input samples.
    pub samples: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            t_end: 2000.0,
            dt: 0.001,
            downsample: 8,
            samples: 20_000,
        }
    }
}

/// The discrete three-output plant
/// `y[k+1] = tanh(A1 y[k] + A2 y[k-1] + B1 u[k] + B2 u[k-1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dt: f64,
    /// Spread of the random output-feedback weights.
    pub feedback_scale: f64,
    /// Spread of the random off-diagonal input weights.
    pub input_scale: f64,
    /// Scale of the delayed-input weights.
    pub delayed_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dt: 0.01,
            feedback_scale: 0.2,
            input_scale: 0.1,
            delayed_scale: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub controller: Option<ControllerConfig>,
    pub path: Option<PathParams>,
    pub sim: SimConfig,
    pub pid: PidGains,
    pub plant: MsdParams,
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

pub const MSD_LEVELS: [f64; 3] = [0.5, 1.0, 2.0];
pub const MSD_DWELL: f64 = 80.0 / 3.0;

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
            _ => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.sim.control_dt > 0.0 && self.sim.plant_dt > 0.0) {
            bail!("control_dt and plant_dt must be positive");
        }
        if let Some(c) = &self.controller {
            c.validate()?;
        }
        if let Some(p) = &self.path {
            p.validate()?;
        }
        self.plant.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Controller tunings for a plant: the configured ones, else the preset.
    pub fn controller_for(&self, plant: PlantKind) -> ControllerConfig {
        self.controller.clone().unwrap_or_else(|| match plant {
            PlantKind::Msd => ControllerConfig::msd_default(),
            PlantKind::Synth3 => synth_controller(),
        })
    }

    /// Reference path: the configured one if its kind matches (or no kind was
    /// requested), else the preset for the requested kind.
    pub fn path_for(&self, plant: PlantKind, kind: Option<PathKind>) -> anyhow::Result<PathParams> {
        if let Some(p) = &self.path {
            if kind.is_none_or(|k| k == p.kind) {
                return Ok(p.clone());
            }
        }
        let kind = kind.unwrap_or(match plant {
            PlantKind::Msd => PathKind::Step,
            PlantKind::Synth3 => PathKind::Infinity,
        });
        preset_path(plant, kind)
    }
}

pub fn synth_controller() -> ControllerConfig {
    ControllerConfig {
        horizon: 1,
        n1: 1,
        n2: 1,
        nc: 1,
        n_d: 2,
        d_d: 2,
        m: 3,
        n: 3,
        w: 0,
        q: Mat2::identity(3),
        lambda: Mat2::identity(3).scale(1e-3),
        s: 1e-20,
        b: 0.0,
        r: 4.0,
        eps: 1e-3,
        max_iters: 3,
        tol: 1e-4,
        u_neutral: vec![0.0; 3],
    }
}

pub fn preset_path(plant: PlantKind, kind: PathKind) -> anyhow::Result<PathParams> {
    Ok(match (plant, kind) {
        (_, PathKind::Step) => step_sequence(&MSD_LEVELS, MSD_DWELL)?,
        (PlantKind::Synth3, k) => PathParams::periodic(k, 0.2, 0.2, 0.2, 1.0, [0.0; 3]),
        (PlantKind::Msd, k) => bail!("the mass-spring-damper plant has one output; {k:?} paths need three"),
    })
}
