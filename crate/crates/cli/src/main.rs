use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eventadapt_cli::commands::{self, RunDir};
use eventadapt_cli::config::ExperimentConfig;
use eventadapt_cli::{exit_code, logging};

#[derive(Parser)]
#[command(name = "eventadapt", version, about = "Population and patient-adapted event forecasting")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the cohort and write one train/test archive per seed.
    Prepare(NewRun),
    /// Train the population model for each seed of an existing run.
    Train(ExistingRun),
    /// Evaluate every configured model variant on the test patients.
    Evaluate(ExistingRun),
    /// Aggregate per-seed reports and print the summary table.
    Report(ExistingRun),
    /// prepare, train, evaluate and report in one go.
    Run(NewRun),
}

#[derive(Args)]
struct NewRun {
    /// Named defaults: desk or full.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// TOML file layered over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `section.key=value` override, applied last (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Use this directory instead of a fresh timestamped one.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ExistingRun {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    logging::init(level);
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn dispatch(command: Command) -> eventadapt::Result<()> {
    let fresh = |r: &NewRun| -> eventadapt::Result<RunDir> {
        let config = ExperimentConfig::resolve(&r.preset, r.config.as_deref(), &r.overrides)?;
        let run = RunDir::create(config, r.run_dir.as_deref())?;
        println!("run directory: {}", run.root.display());
        Ok(run)
    };
    match command {
        Command::Prepare(r) => commands::prepare(&fresh(&r)?),
        Command::Run(r) => {
            let out = commands::run_all(&fresh(&r)?)?;
            print!("{out}");
            Ok(())
        }
        Command::Train(r) => commands::train(&RunDir::open(&r.run_dir, &r.overrides)?),
        Command::Evaluate(r) => commands::evaluate(&RunDir::open(&r.run_dir, &r.overrides)?),
        Command::Report(r) => {
            let out = commands::report(&RunDir::open(&r.run_dir, &r.overrides)?)?;
            print!("{out}");
            Ok(())
        }
    }
}
