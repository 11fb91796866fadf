use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jordan_lab::error::LabError;

mod config;
mod run;

use config::{Flags, Mode};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Jordan-structure laboratory: build matrices with known Jordan form,
/// perturb them and check eigenvalue and Krylov bounds.
#[derive(Debug, Parser)]
#[command(name = "jordan-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Recover the Jordan structure of a Matrix Market file or a realized spec
    Analyze(Flags),
    /// Distinct-eigenvalue bound and geometric-multiplicity drops under rank-r updates
    Perturb(Flags),
    /// GMRES termination and iteration doubling under rank-one updates
    Krylov(Flags),
    /// Deflated Newton on the KKT toy problem and the preconditioned doubling check
    Deflate(Flags),
    /// Attainment of the distinct-eigenvalue bound by diag(1,1,...,k,k) + rank one
    Tightness(Flags),
    /// Run the mode named in the config file
    Run(Flags),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (mode, flags) = match cli.command {
        Command::Analyze(f) => (Some(Mode::Analyze), f),
        Command::Perturb(f) => (Some(Mode::Perturb), f),
        Command::Krylov(f) => (Some(Mode::Krylov), f),
        Command::Deflate(f) => (Some(Mode::Deflate), f),
        Command::Tightness(f) => (Some(Mode::Tightness), f),
        Command::Run(f) => (None, f),
    };
    let result = config::resolve(mode, flags).and_then(|cfg| {
        let verdict = run::run(&cfg)?;
        println!(
            "{:?}: {} ({})",
            cfg.mode,
            match verdict {
                run::Verdict::Pass => "all checks passed",
                run::Verdict::CheckFailed => "check failures",
                run::Verdict::Errored => "errors during trials",
            },
            cfg.out.join(run::SUMMARY_FILE).display()
        );
        Ok(verdict)
    });
    match result {
        Ok(v) => ExitCode::from(v.exit_code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
