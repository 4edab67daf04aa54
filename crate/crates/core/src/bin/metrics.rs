//! Computes the analysis tables from session logs.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use turinghotel::metrics::{compute_report, emit_csv, emit_json, fmt_num, PositiveClass, ReportOptions, SpellChecker};
use turinghotel::roster::Roster;
use turinghotel::store::load_session;

#[derive(Parser)]
#[command(name = "metrics", about = "Session analytics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write report.json and CSV tables for one or more sessions.
    Compute {
        #[arg(long, num_args = 1.., required = true)]
        session: Vec<PathBuf>,
        /// Ground truth; falls back to the labels stored in the logs.
        #[arg(long)]
        roster: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "human")]
        positive_class: PositiveClass,
        #[arg(long, default_value_t = 4)]
        room_size: usize,
        /// Directory holding dictionary.txt, abbreviations.tsv and slang.txt.
        #[arg(long, default_value = "data")]
        data: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    let Cmd::Compute {
        session,
        roster,
        out,
        positive_class,
        room_size,
        data,
    } = Cli::parse().cmd;
    let checker = SpellChecker::load_dir(&data).with_context(|| format!("loading word lists from {}", data.display()))?;
    let roster = roster
        .map(|p| Roster::load(&p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;

    let mut rounds = Vec::new();
    let several = session.len() > 1;
    for path in &session {
        let s = load_session(path).with_context(|| format!("loading {}", path.display()))?;
        for c in &s.corrupt {
            eprintln!("{}: skipped corrupt line {}: {}", path.display(), c.line, c.error);
        }
        if !s.partial.is_empty() {
            eprintln!("{}: ignoring {} incomplete rounds", path.display(), s.partial.len());
        }
        // Room ids restart with every hotel launch.
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        rounds.extend(s.rounds.into_iter().map(|mut r| {
            if several {
                r.room_id = format!("{stem}/{}", r.room_id);
            }
            r
        }));
    }

    let opts = ReportOptions {
        room_size,
        positive_class,
    };
    let report = compute_report(&rounds, roster.as_ref(), &checker, &opts)?;
    let json = emit_json(&report, &out)?;
    let tables = emit_csv(&report, &out)?;

    println!(
        "{} rounds, {} judgments ({} absent verdicts); random baseline {}",
        report.rounds,
        report.judgments,
        report.absent_verdicts,
        fmt_num(Some(report.random_baseline))
    );
    for c in &report.overall {
        println!(
            "{:>5} judges: strict accuracy {}  precision {}  recall {}  (n = {})",
            c.judges,
            fmt_num(c.strict_accuracy),
            fmt_num(c.precision),
            fmt_num(c.recall),
            c.n_judgments
        );
    }
    println!("wrote {}", json.display());
    for t in tables {
        println!("wrote {}", t.display());
    }
    Ok(())
}
