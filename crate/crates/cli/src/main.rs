use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use rwe_cli::commands::{self, ExplainArgs, RunArgs, SynthArgs};
use rwe_cli::server::{self, AppState};
use rwe_cli::CliError;
use rwe_core::pipeline::ScoringService;

#[derive(Debug, Parser)]
#[command(name = "rwe", version, about = "Treatment-effect analysis on admission cohorts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort and its ground-truth sidecar.
    Synth(SynthArgs),
    /// Run the per-drug analysis and write the report and artifacts.
    Run(RunArgs),
    /// Serve the scoring endpoints over HTTP.
    Serve {
        /// Directory with `<drug>/model.json` bundles (a run's output).
        #[arg(long, short)]
        models: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Explain one row of a feature CSV.
    Explain(ExplainArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth(args) => {
            let truth = commands::synth(&args)?;
            println!(
                "wrote {} admissions ({} treated, {} events), true HR {:.3}",
                truth.rows.len(),
                truth.treated,
                truth.events,
                truth.true_hr
            );
        }
        Command::Run(args) => {
            let report = commands::run(&args)?;
            print!("{}", commands::summarize(&report));
        }
        Command::Serve { models, addr } => {
            let service = ScoringService::load_dir(&models)?;
            let state = Arc::new(AppState { service, models_dir: Some(models) });
            let rt = tokio::runtime::Runtime::new().map_err(|source| CliError::Io { path: PathBuf::new(), source })?;
            rt.block_on(server::serve(state, &addr)).map_err(|source| CliError::Io { path: addr.into(), source })?;
        }
        Command::Explain(args) => {
            let out = commands::explain(&args)?;
            if args.out.is_none() {
                println!("{}", serde_json::to_string_pretty(&out)?);
            }
        }
    }
    Ok(())
}
