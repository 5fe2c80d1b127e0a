use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rte_lowrank::experiments::{
    cmd_compare, cmd_run, cmd_singvals, cmd_sweep_dt, cmd_sweep_eps, write_compare, write_run, write_singvals,
    write_sweep_dt, write_sweep_eps, RunConfig,
};
use rte_lowrank::RteError;

/// Low-rank integrators for the scaled 1x1v radiative transfer equation.
///
/// Exit codes: 0 success, 2 config error, 3 numerical failure,
/// 4 size-cap rejection. The output directory defaults to $RTE_OUTPUT_DIR,
/// then ./out.
#[derive(Parser)]
#[command(name = "rte", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One integration; writes result.json and errors.csv.
    Run(Common),
    /// Density error against the diffusion limit for each ε.
    SweepEps(Common),
    /// Error against the full-rank reference for each Δt.
    SweepDt(Common),
    /// Weighted singular values of the reference solution.
    Singvals(Common),
    /// GAP, PSI and BUG against the reference.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// key=value, applied to the config before validation.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn execute(cli: Cli) -> Result<Vec<PathBuf>, RteError> {
    let (common, kind) = match &cli.command {
        Command::Run(c) => (c, 0),
        Command::SweepEps(c) => (c, 1),
        Command::SweepDt(c) => (c, 2),
        Command::Singvals(c) => (c, 3),
        Command::Compare(c) => (c, 4),
    };
    let cfg = RunConfig::load_with_overrides(&common.config, &common.overrides)?;
    let dir = cfg.resolve_output_dir(common.out.as_deref());
    match kind {
        0 => write_run(&dir, &cmd_run(&cfg)?),
        1 => write_sweep_eps(&dir, &cmd_sweep_eps(&cfg, common.workers)?),
        2 => write_sweep_dt(&dir, &cmd_sweep_dt(&cfg, common.workers)?),
        3 => write_singvals(&dir, &cmd_singvals(&cfg)?),
        _ => write_compare(&dir, &cmd_compare(&cfg, common.workers)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("rte: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
