use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nnmpc::paths::PathKind;
use nnmpc_cli::commands::{self, MissingFile, SimArgs};
use nnmpc_cli::config::{ControllerKind, PlantKind, RunConfig};

#[derive(Parser)]
#[command(name = "nnmpc", version, about = "Neural-network MPC: data, training and closed-loop simulation")]
struct Cli {
    /// TOML or JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Roll out the plant under its excitation and write dataset.csv
    Gen {
        #[arg(long, value_enum, default_value = "msd")]
        plant: PlantKind,
    },
    /// Fit a forward model to a dataset and write model.json
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "msd")]
        plant: PlantKind,
    },
    /// Closed-loop run; writes run.csv and report.json
    Simulate {
        #[arg(long, value_enum, default_value = "msd")]
        plant: PlantKind,
        #[arg(long, value_enum, default_value = "mpc")]
        controller: ControllerKind,
        #[arg(long)]
        path: Option<PathKind>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// PID and MPC on the same reference
    Compare {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        path: Option<PathKind>,
    },
    /// Solve time against prediction horizon
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 8)]
        max_horizon: usize,
        #[arg(long, default_value_t = 5.0)]
        seconds: f64,
    },
    /// Energy model for a network size and duration
    Energy {
        #[arg(long)]
        params: usize,
        #[arg(long)]
        seconds: f64,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = cli.out.as_path();
    match cli.cmd {
        Cmd::Gen { plant } => {
            let p = commands::cmd_gen(&cfg, plant, cli.seed, out)?;
            println!("{}", p.display());
        }
        Cmd::Train { data, plant } => {
            let r = commands::cmd_train(&cfg, plant, cli.seed, &data, out)?;
            println!("test mse {:e} ({} parameters)", r.last().test_mse, r.param_count);
        }
        Cmd::Simulate { plant, controller, path, model } => {
            let args = SimArgs {
                plant,
                controller,
                path,
                model: model.as_deref(),
                seed: cli.seed,
            };
            let r = commands::cmd_simulate(&cfg, &args, out)?;
            println!("{}", serde_json::to_string_pretty(&r.summary)?);
        }
        Cmd::Compare { model, path } => {
            let c = commands::cmd_compare(&cfg, path, &model, cli.seed, out)?;
            println!("pid rmse {:e}, mpc rmse {:e}", c.pid.summary.rmse, c.mpc.summary.rmse);
        }
        Cmd::Bench { model, max_horizon, seconds } => {
            let b = commands::cmd_bench(&cfg, &model, max_horizon, seconds, out)?;
            println!("solve time = {:e} N + {:e} s", b.slope_s, b.intercept_s);
        }
        Cmd::Energy { params, seconds } => {
            println!("{}", serde_json::to_string_pretty(&commands::cmd_energy(params, seconds))?);
        }
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<MissingFile>().is_some() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

