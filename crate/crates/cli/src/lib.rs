//! `dfrnet`: KITTI-style evaluation, toy training, ablation sweeps and
//! finite-difference gradient checks over the dfr crates.
//!
//! Configuration comes from a TOML file of flat dotted keys (see
//! [`config::KEYS`]); flags given on the command line override the file.

pub mod checkpoint;
pub mod commands;
pub mod config;
mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dfr_kitti::{ApMode, Category};

pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::RunConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "dfrnet", version, about = "Feature-reflecting 3D detection toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a KITTI result directory against ground-truth labels.
    Eval(EvalArgs),
    /// Train the toy detector and write its history and checkpoint.
    ToyTrain(RunArgs),
    /// Train a sweep of variants over several seeds.
    Ablate(RunArgs),
    /// Compare every analytic gradient with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub det: Option<PathBuf>,
    #[arg(long, value_parser = ["car", "pedestrian", "cyclist"])]
    pub category: Option<String>,
    #[arg(long)]
    pub iou: Option<f64>,
    #[arg(long, value_parser = ["r11", "r40"])]
    pub mode: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random inputs per case.
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Corrupts the adjoint of one op; a negative control for the checker.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

fn load(path: Option<&PathBuf>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), |p| RunConfig::load(p))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Eval(a) => {
            let cfg = load(a.config.as_ref())?;
            let overrides = commands::EvalOverrides {
                gt: a.gt,
                det: a.det,
                category: a.category.map(|c| c.parse::<Category>()).transpose()?,
                iou: a.iou,
                mode: a.mode.map(|m| if m == "r11" { ApMode::R11 } else { ApMode::R40 }),
                out: a.out,
            };
            commands::cmd_eval(cfg, overrides).map(drop)
        }
        Command::ToyTrain(a) => {
            let mut cfg = load(a.config.as_ref())?;
            commands::apply_run_overrides(&mut cfg, a.seed, a.out)?;
            commands::cmd_toy_train(&cfg).map(drop)
        }
        Command::Ablate(a) => {
            let mut cfg = load(a.config.as_ref())?;
            commands::apply_run_overrides(&mut cfg, a.seed, a.out)?;
            commands::cmd_ablate(&cfg).map(drop)
        }
        Command::Gradcheck(a) => {
            let fault = a.inject_fault.as_deref().map(commands::parse_fault).transpose()?;
            commands::cmd_gradcheck(a.seed, a.trials, fault).map(drop)
        }
    }
}
