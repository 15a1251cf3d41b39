//! CSV readers and writers for datasets and run logs.

use std::path::Path;

use anyhow::{bail, Context};
use nnmpc::datapipe::RawLog;
use nnmpc::Mat2;

use crate::sim::SimRun;

fn names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

/// Columns `t, yref*, y*, u*, J, iters`; controller-less fields are empty.
pub fn write_run_csv(path: &Path, run: &SimRun) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let first = run.rows.first();
    let (n, m) = first.map_or((0, 0), |r| (r.y.len(), r.u.len()));
    let mut header = vec!["t".to_string()];
    header.extend(names("yref", n));
    header.extend(names("y", n));
    header.extend(names("u", m));
    header.extend(["J".to_string(), "iters".to_string()]);
    w.write_record(&header)?;
    for r in &run.rows {
        let mut rec = vec![r.t.to_string()];
        rec.extend(r.yref.iter().chain(&r.y).chain(&r.u).map(f64::to_string));
        rec.push(r.cost.map_or(String::new(), |c| c.to_string()));
        rec.push(r.iters.map_or(String::new(), |i| i.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timing_csv(path: &Path, run: &SimRun) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["t", "solve_time_s"])?;
    for r in &run.rows {
        w.write_record([r.t.to_string(), r.solve_time.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `t, u*, y*, l*`, with `t = k dt`.
pub fn write_dataset_csv(path: &Path, log: &RawLog) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["t".to_string()];
    header.extend(names("u", log.input_dim()));
    header.extend(names("y", log.output_dim()));
    header.extend(names("l", log.sensor_dim()));
    w.write_record(&header)?;
    for k in 0..log.len() {
        let mut rec = vec![(k as f64 * log.dt).to_string()];
        rec.extend(log.inputs.row(k).iter().map(f64::to_string));
        rec.extend(log.outputs.row(k).iter().map(f64::to_string));
        if let Some(s) = &log.sensors {
            rec.extend(s.row(k).iter().map(f64::to_string));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv(path: &Path) -> anyhow::Result<RawLog> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = r.headers()?.clone();
    let cols = |p: char| -> Vec<usize> {
        header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with(p) && h[1..].parse::<usize>().is_ok())
            .map(|(i, _)| i)
            .collect()
    };
    let (ti, ui, yi, li) = (header.iter().position(|h| h == "t"), cols('u'), cols('y'), cols('l'));
    let Some(ti) = ti else { bail!("{}: missing t column", path.display()) };
    if ui.is_empty() || yi.is_empty() {
        bail!("{}: need at least one u and one y column", path.display());
    }
    let (mut t, mut u, mut y, mut l) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| -> anyhow::Result<f64> {
            rec.get(i)
                .unwrap_or("")
                .parse()
                .with_context(|| format!("{}: bad number on data row {}", path.display(), line + 1))
        };
        t.push(get(ti)?);
        for &i in &ui {
            u.push(get(i)?);
        }
        for &i in &yi {
            y.push(get(i)?);
        }
        for &i in &li {
            l.push(get(i)?);
        }
    }
    let q = t.len();
    if q < 2 {
        bail!("{}: need at least two rows", path.display());
    }
    let dt = t[1] - t[0];
    let sensors = if li.is_empty() { None } else { Some(Mat2::new(q, li.len(), l)?) };
    Ok(RawLog::new(Mat2::new(q, ui.len(), u)?, Mat2::new(q, yi.len(), y)?, sensors, dt)?)
}
