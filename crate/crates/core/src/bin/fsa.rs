//! Checks behavior documents.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use turinghotel::agent::Participant;
use turinghotel::fsa::{load_behavior_file, Behavior, FsaError};
use turinghotel::hotel::Hotel;

#[derive(Parser)]
#[command(name = "fsa", about = "Behavior document tools")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate documents and print their adjacency listing.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

// Documents for a known role must only name actions that role implements.
fn check(path: &PathBuf) -> Result<Behavior, FsaError> {
    let b = load_behavior_file(path)?;
    match b.role_name.as_str() {
        "manager" => Hotel::check_behavior(&b)?,
        "participant" => Participant::check_behavior(&b)?,
        _ => {}
    }
    Ok(b)
}

fn main() -> ExitCode {
    let Cmd::Validate { files } = Cli::parse().cmd;
    let mut ok = true;
    for path in &files {
        match check(path) {
            Ok(b) => print!("{}", b.adjacency_listing()),
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                ok = false;
            }
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
