use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hamred_cli::commands::{self, RunFlags};
use hamred_cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "hamred", version, about = "Hamiltonian model reduction experiments")]
struct Cli {
    /// Experiment configuration file.
    #[arg(long, global = true, default_value = "experiment.ini")]
    config: PathBuf,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads for `sweep`.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized diagnostics (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the full-order model and write snapshots.
    Fom,
    /// Build the configured reduced bases.
    Basis {
        /// Existing snapshot file; the FOM is integrated when omitted.
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
    /// Build, simulate and evaluate every configured reduced model serially.
    Run {
        #[arg(long)]
        snapshots: Option<PathBuf>,
        /// Write lifted trajectories for each run.
        #[arg(long)]
        emit_trajectory: bool,
        /// Write the Hamiltonian error trace for each run.
        #[arg(long)]
        emit_ham_trace: bool,
    },
    /// Evaluate the full configuration grid in parallel.
    Sweep {
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
    /// Print structural diagnostics as JSON.
    Diagnose {
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> hamred_core::Result<()> {
    let mut cfg = ExperimentConfig::from_file(&cli.config)?;
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(out) = cli.output {
        cfg.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cfg.output_dir.clone();
    let out: &Path = &out;
    match cli.command {
        Command::Fom => {
            let f = commands::cmd_fom(&cfg, out)?;
            println!("{}", f.snapshot_path.display());
        }
        Command::Basis { snapshots } => {
            let (_, snaps) = commands::obtain_snapshots(&cfg, out, snapshots.as_deref())?;
            print!("{}", commands::cmd_basis(&cfg, &snaps, out)?.render());
        }
        Command::Run {
            snapshots,
            emit_trajectory,
            emit_ham_trace,
        } => {
            let (sys, snaps) = commands::obtain_snapshots(&cfg, out, snapshots.as_deref())?;
            let flags = RunFlags {
                emit_trajectory,
                emit_ham_trace,
            };
            print!("{}", commands::cmd_run(&cfg, &sys, &snaps, out, flags)?.render());
        }
        Command::Sweep { snapshots } => {
            let threads = cli
                .threads
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let table = commands::cmd_sweep(&cfg, out, threads, snapshots.as_deref())?;
            eprintln!("{} rows written to {}", table.len(), out.join("sweep.csv").display());
        }
        Command::Diagnose { snapshots } => {
            let (sys, snaps) = commands::obtain_snapshots(&cfg, out, snapshots.as_deref())?;
            let report = commands::cmd_diagnose(&cfg, &sys, &snaps, out)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("JSON value serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
