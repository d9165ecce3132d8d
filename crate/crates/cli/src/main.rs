//! `aggrefeed`: run, check and sweep distributed aggregative feedback
//! optimization scenarios.

mod commands;
mod config;
mod output;
mod plot;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use aggrefeed::sim::IntegratorKind;
use clap::{Args, Parser, Subcommand};

use config::Overrides;

#[derive(Parser)]
#[command(name = "aggrefeed", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config entry, e.g. `--set gains.alpha1=7` (repeatable).
    #[arg(long = "set", value_name = "PATH=VALUE")]
    sets: Vec<String>,
    #[arg(long, value_parser = clap::value_parser!(IntegratorKind))]
    integrator: Option<IntegratorKind>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            sets: self.sets.clone(),
            seed: self.seed,
            integrator: self.integrator,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write CSV, manifest and SVG plots.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Output directory (default: $AGGREFEED_OUT or ./runs, plus a
        /// per-run subdirectory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with code 3 when e_opt does not shrink by 1e-3.
        #[arg(long)]
        require_convergence: bool,
    },
    /// Validate the graph, derivatives, equilibrium and Lyapunov certificate.
    Check {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run one simulation per value of a config entry, in parallel.
    Sweep {
        config: PathBuf,
        /// Dotted config path, e.g. `gains.alpha2`, or `seed`.
        param: String,
        #[arg(required = true, num_args = 1..)]
        values: Vec<String>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render the SVG plots of a run directory from its CSV files.
    Plot { dir: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run {
            config,
            common,
            out,
            require_convergence,
        } => commands::cmd_run(config, &common.overrides(), out.as_deref(), *require_convergence),
        Command::Check { config, common } => commands::cmd_check(config, &common.overrides()),
        Command::Sweep {
            config,
            param,
            values,
            common,
            out,
        } => commands::cmd_sweep(config, param, values, &common.overrides(), out.as_deref()),
        Command::Plot { dir } => commands::cmd_plot(dir),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use commands::Exit;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Exit::Success as u8, 0);
        assert_eq!(Exit::Invalid as u8, 1);
        assert_eq!(Exit::IntegrationFailed as u8, 2);
        assert_eq!(Exit::NotConverged as u8, 3);
    }
}
