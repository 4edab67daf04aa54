//! Runs the room manager.

use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rand::RngCore;
use tokio::net::TcpListener;
use turinghotel::hotel::{Hotel, HotelConfig};
use turinghotel::net::{serve, ServerClock};
use turinghotel::protocol::TokenKey;
use turinghotel::rng::fork;
use turinghotel::roster::Roster;
use turinghotel::store::SessionLog;

#[derive(Parser)]
#[command(name = "hotel", about = "Turing hotel room manager")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Accept participants over TCP lines and websockets until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        /// Hotel settings (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Operator roster (TOML) with every agent's ground truth.
        #[arg(long)]
        roster: PathBuf,
        /// Directory receiving the session log.
        #[arg(long)]
        log: PathBuf,
        /// Fixes room shuffling, proxy letters and the token key.
        #[arg(long)]
        seed: Option<u64>,
        /// Run on a timeline starting at zero that skips ahead to the next
        /// deadline whenever the wire stays quiet.
        #[arg(long)]
        virtual_clock: bool,
        /// Quiet period before a virtual-clock jump, in milliseconds.
        #[arg(long, default_value_t = 5000)]
        quiet_ms: u64,
    },
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let Cmd::Serve {
        bind,
        config,
        roster,
        log,
        seed,
        virtual_clock,
        quiet_ms,
    } = Cli::parse().cmd;

    let config = match config {
        Some(p) => HotelConfig::load(&p).with_context(|| format!("loading {}", p.display()))?,
        None => HotelConfig::default(),
    };
    let roster = Roster::load(&roster).with_context(|| format!("loading {}", roster.display()))?;
    let log = SessionLog::create_in_dir(&log).with_context(|| format!("opening session log in {}", log.display()))?;
    let log_path = log.path().map(|p| p.display().to_string()).unwrap_or_default();
    let mut key = [0u8; 32];
    let seed = match seed {
        Some(s) => {
            fork(s, "hotel/token-key").fill_bytes(&mut key);
            s
        }
        None => {
            rand::thread_rng().fill_bytes(&mut key);
            rand::random()
        }
    };
    let hotel = Hotel::new(config, roster, log, TokenKey::new(key.to_vec()), seed)?;
    let clock = if virtual_clock {
        ServerClock::Virtual {
            quiet: Duration::from_millis(quiet_ms),
        }
    } else {
        ServerClock::Real
    };

    let rt = tokio::runtime::Runtime::new()?;
    let hotel = rt.block_on(async {
        let listener = TcpListener::bind(&bind).await.with_context(|| format!("binding {bind}"))?;
        tracing::info!(addr = %listener.local_addr()?, log = %log_path, ?clock, "hotel open");
        let hotel = serve(listener, hotel, clock, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        anyhow::Ok(hotel)
    })?;
    eprintln!(
        "closed {} rounds; session log {}",
        hotel.completed_rounds().len(),
        log_path
    );
    Ok(())
}
