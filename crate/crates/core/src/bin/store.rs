//! Inspects session logs.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use turinghotel::roster::Truth;
use turinghotel::store::{load_session, PartialRound, RoundRecord, Session};

#[derive(Parser)]
#[command(name = "store", about = "Session log tools")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print every round of a session.
    Dump {
        #[arg(long)]
        session: PathBuf,
        /// Emit the folded session as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

fn clock(ms: u64, origin: u64) -> String {
    let s = ms.saturating_sub(origin) / 1000;
    format!("{:02}:{:02}", s / 60, s % 60)
}

fn truth_label(t: Option<&Option<Truth>>) -> String {
    match t {
        Some(Some(Truth::Human)) => "human".into(),
        Some(Some(Truth::Ai { model: Some(m) })) => format!("ai:{m}"),
        Some(Some(Truth::Ai { model: None })) => "ai".into(),
        _ => "unknown".into(),
    }
}

fn round(out: &mut String, r: &RoundRecord) {
    let _ = writeln!(
        out,
        "== {}  started {}  deadline +{}s  closed +{}s",
        r.room_id,
        r.started_at,
        (r.deadline - r.started_at) / 1000,
        (r.closed_at - r.started_at) / 1000
    );
    for (label, id) in &r.identities {
        let bg = r
            .profiles
            .get(id)
            .map(|p| format!("  {} / {}", p.background.wire_name(), p.ai_experience))
            .unwrap_or_default();
        let _ = writeln!(out, "   {label} = {id} ({}){bg}", truth_label(r.truth.get(id)));
    }
    for e in &r.transcript {
        let _ = writeln!(out, "   [{}] {}: {}", clock(e.at, r.started_at), e.from_proxy, e.text);
    }
    let mut verdicts: Vec<_> = r
        .verdicts
        .iter()
        .map(|(id, v)| (r.proxy_of.get(id).map(|p| p.to_string()).unwrap_or_else(|| "?".into()), v))
        .collect();
    verdicts.sort_by(|a, b| a.0.cmp(&b.0));
    for (label, v) in verdicts {
        match v {
            Some(v) => {
                let picks: Vec<String> = v.judged_human.iter().map(|p| p.to_string()).collect();
                let _ = writeln!(out, "   verdict {label}: human = {{{}}}", picks.join(", "));
            }
            None => {
                let _ = writeln!(out, "   verdict {label}: absent");
            }
        }
    }
}

fn partial(out: &mut String, p: &PartialRound) {
    let _ = writeln!(
        out,
        "== {} (incomplete)  started {}  {} members  {} messages  {} verdicts",
        p.room_id,
        p.started_at,
        p.members.len(),
        p.transcript.len(),
        p.verdicts.len()
    );
}

fn render(s: &Session) -> String {
    let mut out = String::new();
    if let Some(h) = &s.header {
        let _ = writeln!(out, "{} v{}  created {}  {} events", h.format, h.version, h.created_at_ms, s.events);
    }
    for r in &s.rounds {
        round(&mut out, r);
    }
    for p in &s.partial {
        partial(&mut out, p);
    }
    for c in &s.corrupt {
        let _ = writeln!(out, "!! line {}: {}", c.line, c.error);
    }
    for (want, got) in &s.index_gaps {
        let _ = writeln!(out, "!! index gap: expected {want}, found {got}");
    }
    out
}

fn main() -> anyhow::Result<()> {
    let Cmd::Dump { session, json } = Cli::parse().cmd;
    let s = load_session(&session).with_context(|| format!("loading {}", session.display()))?;
    if json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        print!("{}", render(&s));
    }
    Ok(())
}
