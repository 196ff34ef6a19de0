use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use quadform_cli::{
    load_scenario, output_dir, plan_command, plots::emit_plot_data, run_command, simulate_command, CliError, Outcome,
    Overrides, EXIT_OK,
};

#[derive(Parser)]
#[command(
    name = "quadform",
    version,
    about = "Leader-follower formation tracking for planar quadrotors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Scenario file; the shipped defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    trials: Option<usize>,
    #[arg(long, global = true, value_name = "X")]
    noise_sigma: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    sweeps: Option<usize>,
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Check the configuration without solving.
    Validate,
    /// Solve the fleet problem and write the plans.
    Plan,
    /// Roll out previously written plans.
    Simulate,
    /// Plan, simulate and write every artifact.
    Run,
    /// Write plot tables from the artifacts of a run.
    EmitPlots,
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let c = &cli.common;
    let overrides = Overrides {
        seed: c.seed,
        trials: c.trials,
        noise_sigma: c.noise_sigma,
        sweeps: c.sweeps,
    };
    let scenario = load_scenario(c.config.as_deref(), &overrides)?;
    let out = output_dir(&scenario, c.out.as_deref());
    let report = |outcome: Outcome| {
        if !outcome.converged {
            log::warn!("some solves did not converge; artifacts written to {}", out.display());
        }
        outcome.exit_code()
    };
    match cli.command {
        Command::Validate => {
            log::info!("configuration is valid");
            Ok(EXIT_OK)
        }
        Command::Plan => plan_command(&scenario, &out).map(report),
        Command::Simulate => simulate_command(&scenario, &out).map(report),
        Command::Run => run_command(&scenario, &out).map(report),
        Command::EmitPlots => {
            for p in emit_plot_data(&out, scenario.spec())? {
                log::info!("wrote {}", p.display());
            }
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let code = match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
