use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use singular_cbf_cli::{
    compare_runs, parse_config, run_map, run_pair, run_scenario, CliError, ScenarioConfig,
    ScenarioKind, LOG_ENV,
};

/// Singularity-avoiding safety filters: run scenarios, map singular sets,
/// compare runs.
#[derive(Parser)]
#[command(name = "singular-cbf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its trajectory, metrics and plots.
    Run {
        config: PathBuf,
        /// Run the unfiltered baseline instead.
        #[arg(long)]
        no_cbf: bool,
        /// Run with and without the filter into DIR/cbf and DIR/nocbf and
        /// compare them.
        #[arg(long, conflicts_with = "no_cbf")]
        pair: bool,
        /// Output directory; defaults to the config's `output` or
        /// `out/<scenario>`.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Sample the singular set and write the point cloud, grid and mesh.
    Map {
        config: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Compare a filtered run with its unfiltered baseline.
    Metrics {
        dir_cbf: PathBuf,
        dir_nocbf: PathBuf,
    },
}

fn output_dir(cfg: &ScenarioConfig, explicit: Option<PathBuf>, suffix: &str) -> PathBuf {
    explicit
        .or_else(|| cfg.output.as_deref().map(|p| cfg.resolve(p)))
        .unwrap_or_else(|| Path::new("out").join(format!("{}{suffix}", cfg.scenario.name())))
}

/// A closed pipe (`| head`) is not an error worth reporting.
fn print_json<T: serde::Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            no_cbf,
            pair,
            out,
        } => {
            let mut cfg = parse_config(&config)?;
            if no_cbf {
                cfg.cbf = false;
            }
            if cfg.scenario == ScenarioKind::SingularMap {
                let dir = output_dir(&cfg, out, "");
                print_json(&run_map(&cfg, &dir)?);
                return Ok(());
            }
            if pair {
                let dir = output_dir(&cfg, out, "");
                print_json(&run_pair(&cfg, &dir)?);
                return Ok(());
            }
            let dir = output_dir(&cfg, out, if cfg.cbf { "" } else { "_nocbf" });
            let result = run_scenario(&cfg, &dir)?;
            print_json(&result.report);
            log::info!("wrote {}", result.dir.display());
            Ok(())
        }
        Command::Map { config, out } => {
            let cfg = parse_config(&config)?;
            print_json(&run_map(&cfg, &out)?);
            Ok(())
        }
        Command::Metrics { dir_cbf, dir_nocbf } => {
            print_json(&compare_runs(&dir_cbf, &dir_nocbf)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
