use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lazymg::error::Result;
use lazymg::experiment::{compare_runs, emit_table, exit_code, run_experiment, table_config, ExperimentConfig, Telemetry};

#[derive(Parser)]
#[command(name = "lazymg", version, about = "Additive multigrid with delayed operator assembly")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write per-cycle telemetry as CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// `key=value`, applied after the config file.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the memory-footprint table, from telemetry files or by running
    /// the replica for each theta.
    Table {
        files: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,16,64")]
        theta: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        cycles: usize,
    },
    /// Summarise two telemetry files of the same problem.
    Compare { a: PathBuf, b: PathBuf },
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run { config, overrides } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            for kv in &overrides {
                cfg.apply_override(kv)?;
            }
            let out = run_experiment(&cfg)?;
            if cfg.output.is_none() {
                out.telemetry.write_csv(std::io::stdout().lock())?;
            }
            eprintln!("{} after {} cycles", out.status.as_str(), out.telemetry.rows.len());
            Ok(out.exit_code())
        }
        Command::Table { files, theta, cycles } => {
            let runs = if files.is_empty() {
                theta
                    .iter()
                    .map(|&t| run_experiment(&table_config(t, cycles)).map(|o| o.telemetry))
                    .collect::<Result<Vec<_>>>()?
            } else {
                files.iter().map(|f| Telemetry::from_path(f)).collect::<Result<Vec<_>>>()?
            };
            print!("{}", emit_table(&runs));
            Ok(0)
        }
        Command::Compare { a, b } => {
            let s = compare_runs(&Telemetry::from_path(&a)?, &Telemetry::from_path(&b)?)?;
            std::io::stdout().write_all(s.as_bytes())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(lazymg::solver::Termination::Continue) as u8)
        }
    }
}
