use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use thiserror::Error;
use tracing::{info, warn};

use crate::agent::Participant;
use crate::clock::{wall_millis, Millis};
use crate::protocol::{decode, encode_line, Envelope};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("world {addr} unreachable after {attempts} attempts: {last}")]
    Unreachable {
        addr: String,
        attempts: u32,
        last: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    /// `host:port` of the hotel.
    pub world: String,
    /// Consecutive failed connection attempts before giving up.
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    /// Longest wait between two checks of the participant's timers.
    pub poll: Duration,
}

impl ClientOptions {
    pub fn new(world: impl Into<String>) -> Self {
        Self {
            world: world.into(),
            max_attempts: 8,
            initial_backoff: Duration::from_millis(250),
            max_backoff: Duration::from_secs(8),
            poll: Duration::from_millis(200),
        }
    }
}

fn connect(opts: &ClientOptions) -> Result<TcpStream, ClientError> {
    let mut backoff = opts.initial_backoff;
    let mut attempt = 0;
    loop {
        attempt += 1;
        match TcpStream::connect(&opts.world) {
            Ok(s) => return Ok(s),
            Err(e) if attempt >= opts.max_attempts => {
                return Err(ClientError::Unreachable {
                    addr: opts.world.clone(),
                    attempts: attempt,
                    last: e,
                })
            }
            Err(e) => {
                warn!(attempt, "connecting to {} failed: {e}; retrying in {backoff:?}", opts.world);
                thread::sleep(backoff);
                backoff = (backoff * 2).min(opts.max_backoff);
            }
        }
    }
}

// Tracks the world's timeline from the `sent_at` stamps it sends, so deadlines
// compare correctly even when the hotel runs on its own clock. Until the first
// frame arrives the timeline starts at zero.
struct WorldTime {
    offset: i128,
    last: Millis,
}

impl WorldTime {
    fn now(&self) -> Millis {
        let t = (wall_millis() as i128 + self.offset).max(0) as Millis;
        t.max(self.last)
    }

    fn observe(&mut self, sent_at: Millis) {
        self.offset = sent_at as i128 - wall_millis() as i128;
        self.last = self.last.max(sent_at);
    }
}

/// Runs `participant` against the world until it has left. Lost connections
/// are re-established with exponential backoff; `on_frame` sees every
/// envelope received.
pub fn run_client(
    participant: &mut Participant,
    opts: &ClientOptions,
    mut on_frame: impl FnMut(&Envelope),
) -> Result<(), ClientError> {
    let mut time = WorldTime {
        offset: -(wall_millis() as i128),
        last: 0,
    };
    loop {
        let stream = connect(opts)?;
        info!(world = %opts.world, agent = participant.agent_id(), "connected");
        let mut writer = stream.try_clone().map_err(|last| ClientError::Unreachable {
            addr: opts.world.clone(),
            attempts: 1,
            last,
        })?;
        let (tx, rx) = mpsc::channel::<String>();
        let reader = thread::spawn(move || {
            for line in BufReader::new(stream).lines() {
                let Ok(l) = line else { break };
                if tx.send(l).is_err() {
                    break;
                }
            }
        });
        let mut send = |envs: Vec<Envelope>| -> bool {
            envs.iter().all(|e| {
                let mut line = encode_line(e);
                line.push('\n');
                writer.write_all(line.as_bytes()).is_ok()
            })
        };
        let mut alive = send(participant.start(time.now()));
        while alive {
            let wait = participant
                .next_wake()
                .map(|t| Duration::from_millis(t.saturating_sub(time.now())))
                .map_or(opts.poll, |w| w.min(opts.poll));
            match rx.recv_timeout(wait) {
                Ok(line) => {
                    let Ok(env) = decode(line.as_bytes()) else {
                        warn!("undecodable frame from world");
                        continue;
                    };
                    time.observe(env.sent_at);
                    on_frame(&env);
                    alive = send(participant.handle(time.now(), env));
                }
                Err(RecvTimeoutError::Timeout) => alive = send(participant.tick(time.now())),
                Err(RecvTimeoutError::Disconnected) => alive = false,
            }
        }
        let _ = writer.shutdown(std::net::Shutdown::Both);
        let _ = reader.join();
        if participant.has_left() {
            return Ok(());
        }
        warn!(agent = participant.agent_id(), "connection lost; reconnecting");
        participant.reset_connection();
    }
}
