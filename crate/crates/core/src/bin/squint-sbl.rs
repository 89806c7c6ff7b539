use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use squint_sbl::experiment::{aggregate, read_metrics, run_experiment, write_aggregate, ExperimentConfig, Preset, Stat};

#[derive(Parser)]
#[command(version, about = "Wideband mmWave channel estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo sweep and write metrics.csv and timing.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed; overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Defaults for keys the config leaves out.
        #[arg(long)]
        preset: Option<Preset>,
    },
    /// Summarize a metrics CSV per sweep value and method.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "mean")]
        stat: Stat,
    },
    /// Parse and check a config, then print it fully resolved.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        preset: Option<Preset>,
    },
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn real_main(cli: Cli) -> squint_sbl::Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            workers,
            preset,
        } => {
            let mut exp = ExperimentConfig::load(&config, preset)?;
            if let Some(s) = seed {
                exp.seed = s;
            }
            let dir = out.unwrap_or_else(|| exp.out_dir.clone());
            let res = run_experiment(&exp, &dir, workers)?;
            eprintln!("wrote {} rows to {}", res.rows, res.metrics.display());
        }
        Command::Aggregate { input, stat } => {
            let rows = read_metrics(std::fs::File::open(input)?)?;
            write_aggregate(&aggregate(&rows, stat), std::io::stdout().lock())?;
        }
        Command::Validate { config, preset } => {
            let exp = ExperimentConfig::load(&config, preset)?;
            print!("{}", exp.to_toml());
        }
    }
    Ok(())
}
