//! Command-line front end for `permatch`.
//!
//! Exit codes: 0 success, 1 input error, 2 training stagnated (outputs still
//! written), 64 usage error. Every run writes a JSON manifest next to its
//! primary output; `permatch replay --manifest <file>` reruns it.

pub mod args;
pub mod commands;
pub mod error;
pub mod io;
pub mod manifest;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

pub use args::Cli;
use args::Command;
use commands::Context;
pub use error::{CliError, Status, EXIT_INPUT, EXIT_OK, EXIT_STAGNATION, EXIT_USAGE};
use manifest::RunManifest;

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let recorded: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, recorded) {
        Ok(status) => status.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command inside a thread pool sized by `--threads`.
pub fn execute(cli: &Cli, argv: Vec<String>) -> Result<Status, CliError> {
    match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(cli, argv))
        }
        None => dispatch(cli, argv),
    }
}

fn dispatch(cli: &Cli, argv: Vec<String>) -> Result<Status, CliError> {
    let ctx = Context {
        argv,
        options: serde_json::to_value(cli).expect("options serialize"),
        subcommand: cli.command.name(),
    };
    match &cli.command {
        Command::Train(a) => commands::cmd_train(a, &ctx),
        Command::Predict(a) => commands::cmd_predict(a, &ctx),
        Command::Evaluate(a) => commands::cmd_evaluate(a, &ctx),
        Command::Sample(a) => commands::cmd_sample(a, &ctx),
        Command::Permanent(a) => commands::cmd_permanent(a, &ctx),
        Command::Cv(a) => commands::cmd_cv(a, &ctx),
        Command::Bench(a) => commands::cmd_bench(a, &ctx),
        Command::GenPairs(a) => commands::cmd_gen_pairs(a, &ctx),
        Command::GenLetor(a) => commands::cmd_gen_letor(a, &ctx),
        Command::Replay(a) => replay(&a.manifest),
    }
}

fn replay(path: &std::path::Path) -> Result<Status, CliError> {
    let manifest = RunManifest::read(path)?;
    if manifest.subcommand == "replay" {
        return Err(CliError::Input("a replay manifest cannot be replayed".into()));
    }
    manifest.verify_inputs()?;
    let argv = std::iter::once("permatch".to_string()).chain(manifest.argv.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Input(format!("manifest arguments: {e}")))?;
    execute(&cli, manifest.argv.clone())
}
