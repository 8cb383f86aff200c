use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use squid_dephasing::cli::{self, Command, RunConfig, SweepMode};
use squid_dephasing::error::{Error, Result};

#[derive(Parser)]
#[command(name = "squid-dephasing", version, about = "Flux-noise dephasing of an rf-SQUID qubit")]
struct Args {
    /// JSON run configuration; defaults apply to anything missing.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write every member trajectory (evolve only).
    #[arg(long, global = true)]
    debug_trajectories: bool,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Eigenvalues, eigenvectors and a two-state summary.
    Spectrum,
    /// One ensemble and its damped-cosine fit.
    Evolve,
    /// Dephasing rate against noise variance or bandwidth.
    Sweep {
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Mutual-inductance threshold report.
    Coupling,
    /// Export the basis table used by `evolve`.
    DumpTable,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Variance,
    Bandwidth,
}

fn execute(args: Args) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    let command = match args.command {
        Sub::Spectrum => Command::Spectrum,
        Sub::Evolve => Command::Evolve {
            debug_trajectories: args.debug_trajectories,
        },
        Sub::Sweep { mode: Mode::Variance } => Command::Sweep(SweepMode::Variance),
        Sub::Sweep { mode: Mode::Bandwidth } => Command::Sweep(SweepMode::Bandwidth),
        Sub::Coupling => Command::Coupling,
        Sub::DumpTable => Command::DumpTable,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let written = pool.install(|| cli::run(&config, command))?;
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
