//! `mtksmm` — train, evaluate and plot multi-task kernel-smoothing
//! manifold models from JSON configs.
//!
//! Exit codes: 0 success, 1 runtime/numerical failure, 2 config/IO
//! failure.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use mtksmm::commands;
use mtksmm::config::RunConfig;
use mtksmm::{CliError, Result};

#[derive(Parser)]
#[command(name = "mtksmm", version, about = "Multi-task manifold model experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonOpts {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides the config's `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (overrides the config's `workers`).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write model/fit-state/trace files.
    Train(CommonOpts),
    /// Score a saved model, or run the full three-method comparison.
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
        /// Saved model to score; omit to run the comparison grid.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Decode G(z, u) over latent lists or grids from a saved model.
    Generate {
        /// Saved model file.
        #[arg(long)]
        model: PathBuf,
        /// Sample latents: `z1,z2;z1,z2;...` (empty for none).
        #[arg(long)]
        z: Option<String>,
        /// Axis-aligned z grid resolution (default 10 when --z absent).
        #[arg(long)]
        z_grid: Option<usize>,
        /// Task latents, same syntax as --z (default: the origin).
        #[arg(long)]
        u: Option<String>,
        /// Axis-aligned u grid resolution.
        #[arg(long)]
        u_grid: Option<usize>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write an SVG projection of the decoded points.
        #[arg(long)]
        svg: bool,
        /// Projected observation coordinates for the SVG, e.g. `0,2`.
        #[arg(long)]
        proj: Option<String>,
    },
    /// Sweep S/T values and plot per-mode RMSE/MI curves.
    Sweep(CommonOpts),
    /// Generate the config's dataset and export it to CSV.
    Datagen(CommonOpts),
}

fn load_config(opts: &CommonOpts) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&opts.config)?;
    if let Some(out) = &opts.out {
        cfg.output_dir = out.to_string_lossy().into_owned();
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = opts.workers {
        cfg.workers = workers;
    }
    Ok(cfg)
}

fn parse_proj(text: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(CliError::Config(format!("--proj expects two indices, got '{text}'")));
    }
    let a = parts[0].trim().parse().map_err(|_| {
        CliError::Config(format!("--proj: '{}' is not an index", parts[0]))
    })?;
    let b = parts[1].trim().parse().map_err(|_| {
        CliError::Config(format!("--proj: '{}' is not an index", parts[1]))
    })?;
    Ok((a, b))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(opts) => commands::cmd_train(&load_config(&opts)?),
        Command::Evaluate { common, model } => {
            commands::cmd_evaluate(&load_config(&common)?, model.as_deref())
        }
        Command::Generate { model, z, z_grid, u, u_grid, out, svg, proj } => {
            let proj = proj.as_deref().map(parse_proj).transpose()?;
            commands::cmd_generate(
                &model,
                z.as_deref(),
                z_grid,
                u.as_deref(),
                u_grid,
                &out,
                svg,
                proj,
            )
        }
        Command::Sweep(opts) => commands::cmd_sweep(&load_config(&opts)?),
        Command::Datagen(opts) => commands::cmd_datagen(&load_config(&opts)?),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
