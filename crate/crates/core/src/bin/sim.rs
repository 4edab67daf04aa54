//! Runs simulation scenarios.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use turinghotel::sim::{run, Scenario, SimError, SimOptions};

#[derive(Parser)]
#[command(name = "sim", about = "Deterministic hotel simulations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and check its expectations.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Drive the scenario from the wall clock instead of virtual time.
        #[arg(long)]
        real_clock: bool,
        /// Factor applied to every duration under --real-clock.
        #[arg(long, default_value_t = 0.01, requires = "real_clock")]
        time_scale: f64,
        /// Write the session log to this file.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write the scenario's roster to this file.
        #[arg(long)]
        roster_out: Option<PathBuf>,
        /// Kill the process as soon as this many rounds have closed.
        #[arg(long)]
        abort_after_rounds: Option<usize>,
        /// Print the outcome as JSON.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> anyhow::Result<ExitCode> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let Cmd::Run {
        scenario,
        real_clock,
        time_scale,
        log,
        roster_out,
        abort_after_rounds,
        json,
    } = Cli::parse().cmd;
    let sc = Scenario::load(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
    if let Some(p) = &roster_out {
        std::fs::write(p, sc.roster().to_toml_string()).with_context(|| format!("writing {}", p.display()))?;
    }
    let opts = SimOptions {
        log_path: log,
        real_clock: real_clock.then_some(time_scale),
        abort_after_rounds,
    };
    let outcome = match run(&sc, &opts) {
        Ok(o) => o,
        Err(e @ SimError::Deadlock { .. }) => {
            eprintln!("{}: {e}", sc.name);
            return Ok(ExitCode::FAILURE);
        }
        Err(e) => return Err(e.into()),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&outcome)?);
    } else {
        println!(
            "{}: {} rounds closed, {} verdicts, {} absent, ended at {:.1} s",
            sc.name,
            outcome.rounds_closed,
            outcome.verdicts_recorded,
            outcome.verdicts_absent,
            outcome.ended_at as f64 / 1000.0
        );
        for a in &outcome.assertions {
            let mark = if a.passed { "ok  " } else { "FAIL" };
            println!("  {mark} {} expected {} got {}", a.name, a.expected, a.actual);
        }
    }
    Ok(if outcome.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
