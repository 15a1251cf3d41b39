//! Reference trajectories.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Infinity,
    Pringle,
    Line,
    Swirl,
    Step,
}

impl FromStr for PathKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "infinity" => Ok(PathKind::Infinity),
            "pringle" => Ok(PathKind::Pringle),
            "line" | "diagonal" => Ok(PathKind::Line),
            "swirl" => Ok(PathKind::Swirl),
            "step" => Ok(PathKind::Step),
            other => Err(Error::Argument(format!("unknown path kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathParams {
    pub kind: PathKind,
    #[serde(rename = "A", default)]
    pub a: f64,
    #[serde(rename = "B", default)]
    pub b: f64,
    #[serde(rename = "C", default)]
    pub c: f64,
    /// rad/s
    #[serde(default)]
    pub omega: f64,
    /// Neutral offset, one entry per output.
    pub y0: Vec<f64>,
    /// Step levels added to `y0`; step paths only.
    #[serde(default)]
    pub levels: Vec<f64>,
    /// Seconds per level; step paths only.
    #[serde(default)]
    pub dwell: f64,
}

impl PathParams {
    pub fn periodic(kind: PathKind, a: f64, b: f64, c: f64, omega: f64, y0: [f64; 3]) -> Self {
        PathParams {
            kind,
            a,
            b,
            c,
            omega,
            y0: y0.to_vec(),
            levels: Vec::new(),
            dwell: 0.0,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.y0.len()
    }

    /// Largest coordinate amplitude of a periodic path.
    pub fn amplitude(&self) -> f64 {
        match self.kind {
            PathKind::Step => self.levels.iter().fold(0.0, |m: f64, l| m.max(l.abs())),
            _ => self.a.abs().max(self.b.abs()).max(self.c.abs()),
        }
    }

    /// Duration of a step schedule; one period otherwise.
    pub fn duration(&self) -> f64 {
        match self.kind {
            PathKind::Step => self.dwell * self.levels.len() as f64,
            _ => 2.0 * std::f64::consts::PI / self.omega,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PathKind::Step => {
                if self.levels.is_empty() || !(self.dwell > 0.0) || self.y0.is_empty() {
                    return Err(Error::Argument(
                        "step path needs levels, a positive dwell and an offset".into(),
                    ));
                }
            }
            kind => {
                if self.y0.len() != 3 {
                    return Err(Error::Argument(format!("{kind:?} path has 3 outputs, y0 has {}", self.y0.len())));
                }
                if !(self.omega > 0.0) {
                    return Err(Error::Argument("periodic path needs omega > 0".into()));
                }
                if kind != PathKind::Infinity && (self.b == 0.0 || self.c == 0.0) {
                    return Err(Error::Argument(format!("{kind:?} path needs nonzero B and C")));
                }
            }
        }
        Ok(())
    }
}

/// Piecewise-constant schedule: level `i` holds on `[i*dwell, (i+1)*dwell)`;
/// the last level holds afterwards.
pub fn step_sequence(levels: &[f64], dwell: f64) -> Result<PathParams> {
    let p = PathParams {
        kind: PathKind::Step,
        a: 0.0,
        b: 0.0,
        c: 0.0,
        omega: 0.0,
        y0: vec![0.0],
        levels: levels.to_vec(),
        dwell,
    };
    p.validate()?;
    Ok(p)
}

/// Index of the active step level at time `t`.
pub fn step_index(p: &PathParams, t: f64) -> usize {
    let i = (t / p.dwell).floor().max(0.0) as usize;
    i.min(p.levels.len() - 1)
}

fn saddle(p: &PathParams, d1: f64, d2: f64) -> f64 {
    p.a * (d2 * d2 / (p.b * p.b) - d1 * d1 / (p.c * p.c)) + p.y0[0]
}

pub fn path_point(p: &PathParams, t: f64) -> Result<Vec<f64>> {
    p.validate()?;
    let y0 = &p.y0;
    let wt = p.omega * t;
    Ok(match p.kind {
        PathKind::Infinity => vec![
            p.a * wt.sin().powi(2) + y0[0],
            p.b * wt.sin() * wt.cos() + y0[1],
            p.c * wt.sin() + y0[2],
        ],
        PathKind::Pringle | PathKind::Swirl => {
            let (d1, d2) = (p.b * wt.cos(), p.c * wt.sin());
            vec![saddle(p, d1, d2), d1 + y0[1], d2 + y0[2]]
        }
        PathKind::Line => {
            let phase = wt + 1e-6 * t * t;
            let (d1, d2) = (p.b * phase.sin(), p.c * phase.sin());
            vec![saddle(p, d1, d2), d1 + y0[1], d2 + y0[2]]
        }
        PathKind::Step => {
            let level = p.levels[step_index(p, t)];
            y0.iter().map(|o| o + level).collect()
        }
    })
}
