use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use overparam_bench::commands::{cmd_phase, cmd_reconstruct, cmd_run, print_report, Report};
use overparam_bench::config::{ExperimentConfig, PhaseConfig, ReconstructConfig};
use overparam_bench::BenchError;

/// Solver benchmarks, phase-transition sweeps and image reconstructions.
#[derive(Debug, Parser)]
#[command(name = "overparam", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every [solver:NAME] on the configured problem.
    Run(Common),
    /// Exact-recovery counts over a grid of measurement numbers.
    Phase(Common),
    /// Denoise, inpaint or TV-L1 clean an image.
    Reconstruct(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides [output] dir.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel sweeps.
    #[arg(long)]
    threads: Option<usize>,
}

fn out_dir(flag: &Option<PathBuf>, cfg: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| cfg.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn execute(cmd: &Command) -> Result<Report, BenchError> {
    let (Command::Run(c) | Command::Phase(c) | Command::Reconstruct(c)) = cmd;
    let text = std::fs::read_to_string(&c.config).map_err(|e| BenchError::io(&c.config, e))?;
    if let Some(t) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| BenchError::io(Path::new("--threads"), e))?;
    }
    match cmd {
        Command::Run(_) => {
            let mut cfg = ExperimentConfig::parse(&text)?;
            if let Some(s) = c.seed {
                cfg.problem.seed = s;
            }
            cmd_run(&cfg, &out_dir(&c.out, &cfg.out))
        }
        Command::Phase(_) => {
            let mut cfg = PhaseConfig::parse(&text)?;
            if let Some(s) = c.seed {
                cfg.sweep.seed = s;
            }
            cmd_phase(&cfg, &out_dir(&c.out, &cfg.out))
        }
        Command::Reconstruct(_) => {
            let mut cfg = ReconstructConfig::parse(&text, c.config.parent())?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            cmd_reconstruct(&cfg, &out_dir(&c.out, &cfg.out))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(report) => {
            print_report(&report, std::io::stderr());
            if report.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
