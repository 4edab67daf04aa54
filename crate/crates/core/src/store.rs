//! Append-only session log.
//!
//! A session file starts with a versioned header line followed by one JSON
//! [`EventRecord`] per line. Every append is written in a single call and
//! flushed before returning, so a crash loses at most the line being written.
//! [`load_session`] folds the events back into [`RoundRecord`]s.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{wall_millis, Millis};
use crate::protocol::{ProfileForm, ProxyLabel, RoomId, Verdict};
use crate::roster::Truth;

pub const LOG_FORMAT: &str = "turinghotel-session";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub format: String,
    pub version: u32,
    pub created_at_ms: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body")]
pub enum Event {
    GuestJoined {
        agent_id: String,
        display_name: String,
    },
    ProfileRecorded {
        agent_id: String,
        profile: ProfileForm,
    },
    RoomFormed {
        room_id: RoomId,
        members: Vec<String>,
        started_at: Millis,
        deadline: Millis,
    },
    ProxyAssigned {
        room_id: RoomId,
        proxy_of: BTreeMap<String, ProxyLabel>,
    },
    Chat {
        room_id: RoomId,
        from_proxy: ProxyLabel,
        text: String,
    },
    SurveyPrompted {
        room_id: RoomId,
        agent_id: String,
        options: Vec<ProxyLabel>,
    },
    VerdictRecorded {
        room_id: RoomId,
        agent_id: String,
        verdict: Verdict,
    },
    VerdictAbsent {
        room_id: RoomId,
        agent_id: String,
    },
    /// Identity resolution; truth labels are joined from the roster here and nowhere earlier.
    RoundClosed {
        room_id: RoomId,
        identities: BTreeMap<ProxyLabel, String>,
        truth: BTreeMap<String, Option<Truth>>,
    },
    GuestLeft {
        agent_id: String,
        reason: String,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::GuestJoined { .. } => "GuestJoined",
            Event::ProfileRecorded { .. } => "ProfileRecorded",
            Event::RoomFormed { .. } => "RoomFormed",
            Event::ProxyAssigned { .. } => "ProxyAssigned",
            Event::Chat { .. } => "Chat",
            Event::SurveyPrompted { .. } => "SurveyPrompted",
            Event::VerdictRecorded { .. } => "VerdictRecorded",
            Event::VerdictAbsent { .. } => "VerdictAbsent",
            Event::RoundClosed { .. } => "RoundClosed",
            Event::GuestLeft { .. } => "GuestLeft",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub index: u64,
    pub at: Millis,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub at: Millis,
    pub from_proxy: ProxyLabel,
    pub text: String,
}

/// Everything known about one finished round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub room_id: RoomId,
    /// Seat order.
    pub members: Vec<String>,
    pub proxy_of: BTreeMap<String, ProxyLabel>,
    pub identities: BTreeMap<ProxyLabel, String>,
    pub started_at: Millis,
    pub deadline: Millis,
    pub closed_at: Millis,
    pub transcript: Vec<TranscriptEntry>,
    /// `None` marks an absent verdict.
    pub verdicts: BTreeMap<String, Option<Verdict>>,
    pub truth: BTreeMap<String, Option<Truth>>,
    pub profiles: BTreeMap<String, ProfileForm>,
}

impl RoundRecord {
    pub fn room_size(&self) -> usize {
        self.members.len()
    }

    pub fn author_of(&self, label: ProxyLabel) -> Option<&str> {
        self.identities.get(&label).map(String::as_str)
    }
}

/// A round that was formed but never closed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartialRound {
    pub room_id: RoomId,
    pub members: Vec<String>,
    pub proxy_of: BTreeMap<String, ProxyLabel>,
    pub started_at: Millis,
    pub deadline: Millis,
    pub transcript: Vec<TranscriptEntry>,
    pub verdicts: BTreeMap<String, Verdict>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session log i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorruptLine {
    /// 1-based line number in the file.
    pub line: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Session {
    pub header: Option<SessionHeader>,
    pub rounds: Vec<RoundRecord>,
    pub partial: Vec<PartialRound>,
    pub profiles: BTreeMap<String, ProfileForm>,
    pub events: usize,
    pub corrupt: Vec<CorruptLine>,
    /// `(expected, found)` for every break in the index sequence.
    pub index_gaps: Vec<(u64, u64)>,
}

/// Shared in-memory sink, handy for simulations and tests.
#[derive(Debug, Clone, Default)]
pub struct MemorySink(Arc<Mutex<Vec<u8>>>);

impl MemorySink {
    pub fn bytes(&self) -> Vec<u8> {
        self.0.lock().expect("sink lock").clone()
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.bytes()).into_owned()
    }
}

impl Write for MemorySink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().expect("sink lock").extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Writer side of a session log. Single writer: the hotel event loop.
pub struct SessionLog {
    sink: Box<dyn Write + Send>,
    next_index: u64,
    path: Option<PathBuf>,
}

impl std::fmt::Debug for SessionLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionLog")
            .field("next_index", &self.next_index)
            .field("path", &self.path)
            .finish()
    }
}

impl SessionLog {
    /// Starts a log on an arbitrary writer, emitting the header line.
    pub fn with_writer(sink: impl Write + Send + 'static) -> Result<Self, StoreError> {
        let mut log = Self {
            sink: Box::new(sink),
            next_index: 0,
            path: None,
        };
        let header = SessionHeader {
            format: LOG_FORMAT.into(),
            version: LOG_VERSION,
            created_at_ms: wall_millis(),
        };
        log.write_line(&serde_json::to_string(&header).expect("header serializes"))?;
        Ok(log)
    }

    /// Creates (or truncates) a session file.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path.as_ref())?;
        let mut log = Self::with_writer(file)?;
        log.path = Some(path.as_ref().to_owned());
        Ok(log)
    }

    /// Creates a timestamped session file inside `dir`.
    pub fn create_in_dir(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir.as_ref())?;
        let path = dir.as_ref().join(format!("session-{}.jsonl", wall_millis()));
        Self::create(path)
    }

    pub fn in_memory() -> (Self, MemorySink) {
        let sink = MemorySink::default();
        let log = Self::with_writer(sink.clone()).expect("memory writes cannot fail");
        (log, sink)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    fn write_line(&mut self, line: &str) -> Result<(), StoreError> {
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        self.sink.write_all(&buf)?;
        self.sink.flush()?;
        Ok(())
    }

    /// Appends one event and returns its index. The record is flushed before returning.
    pub fn append_event(&mut self, at: Millis, event: Event) -> Result<u64, StoreError> {
        let record = EventRecord {
            index: self.next_index,
            at,
            event,
        };
        self.write_line(&serde_json::to_string(&record).expect("events serialize"))?;
        self.next_index += 1;
        Ok(record.index)
    }
}

#[derive(Debug, Default)]
struct OpenRoom {
    members: Vec<String>,
    proxy_of: BTreeMap<String, ProxyLabel>,
    started_at: Millis,
    deadline: Millis,
    transcript: Vec<TranscriptEntry>,
    verdicts: BTreeMap<String, Option<Verdict>>,
}

/// Folds a stream of records into rounds.
#[derive(Debug, Default)]
pub struct SessionFolder {
    open: BTreeMap<RoomId, OpenRoom>,
    // Rooms in formation order, so partial rounds come out deterministically.
    order: Vec<RoomId>,
    profiles: BTreeMap<String, ProfileForm>,
    rounds: Vec<RoundRecord>,
    expected_index: Option<u64>,
    gaps: Vec<(u64, u64)>,
    events: usize,
}

impl SessionFolder {
    pub fn push(&mut self, record: EventRecord) {
        if let Some(expected) = self.expected_index {
            if record.index != expected {
                self.gaps.push((expected, record.index));
            }
        }
        self.expected_index = Some(record.index + 1);
        self.events += 1;
        let at = record.at;
        match record.event {
            Event::ProfileRecorded { agent_id, profile } => {
                self.profiles.insert(agent_id, profile);
            }
            Event::RoomFormed {
                room_id,
                members,
                started_at,
                deadline,
            } => {
                self.order.push(room_id.clone());
                self.open.insert(
                    room_id,
                    OpenRoom {
                        members,
                        started_at,
                        deadline,
                        ..OpenRoom::default()
                    },
                );
            }
            Event::ProxyAssigned { room_id, proxy_of } => {
                if let Some(room) = self.open.get_mut(&room_id) {
                    room.proxy_of = proxy_of;
                }
            }
            Event::Chat {
                room_id,
                from_proxy,
                text,
            } => {
                if let Some(room) = self.open.get_mut(&room_id) {
                    room.transcript.push(TranscriptEntry { at, from_proxy, text });
                }
            }
            Event::VerdictRecorded {
                room_id,
                agent_id,
                verdict,
            } => {
                if let Some(room) = self.open.get_mut(&room_id) {
                    room.verdicts.insert(agent_id, Some(verdict));
                }
            }
            Event::VerdictAbsent { room_id, agent_id } => {
                if let Some(room) = self.open.get_mut(&room_id) {
                    room.verdicts.entry(agent_id).or_insert(None);
                }
            }
            Event::RoundClosed {
                room_id,
                identities,
                truth,
            } => {
                if let Some(room) = self.open.remove(&room_id) {
                    self.order.retain(|r| r != &room_id);
                    let verdicts = room
                        .members
                        .iter()
                        .map(|m| (m.clone(), room.verdicts.get(m).cloned().flatten()))
                        .collect();
                    let profiles = room
                        .members
                        .iter()
                        .filter_map(|m| self.profiles.get(m).map(|p| (m.clone(), p.clone())))
                        .collect();
                    self.rounds.push(RoundRecord {
                        room_id,
                        members: room.members,
                        proxy_of: room.proxy_of,
                        identities,
                        started_at: room.started_at,
                        deadline: room.deadline,
                        closed_at: at,
                        transcript: room.transcript,
                        verdicts,
                        truth,
                        profiles,
                    });
                }
            }
            Event::GuestJoined { .. } | Event::SurveyPrompted { .. } | Event::GuestLeft { .. } => {}
        }
    }

    pub fn finish(mut self, header: Option<SessionHeader>, corrupt: Vec<CorruptLine>) -> Session {
        let partial = self
            .order
            .iter()
            .filter_map(|id| {
                let room = self.open.remove(id)?;
                Some(PartialRound {
                    room_id: id.clone(),
                    members: room.members,
                    proxy_of: room.proxy_of,
                    started_at: room.started_at,
                    deadline: room.deadline,
                    transcript: room.transcript,
                    verdicts: room
                        .verdicts
                        .into_iter()
                        .filter_map(|(k, v)| v.map(|v| (k, v)))
                        .collect(),
                })
            })
            .collect();
        Session {
            header,
            rounds: self.rounds,
            partial,
            profiles: self.profiles,
            events: self.events,
            corrupt,
            index_gaps: self.gaps,
        }
    }
}

/// Parses a session from any reader. Corrupt lines are reported, not fatal.
pub fn parse_session(reader: impl BufRead) -> Result<Session, StoreError> {
    let mut folder = SessionFolder::default();
    let mut header = None;
    let mut corrupt = Vec::new();
    for (i, line) in reader.split(b'\n').enumerate() {
        let line = line?;
        let lineno = i + 1;
        let text = match std::str::from_utf8(&line) {
            Ok(t) => t.trim_end_matches('\r'),
            Err(e) => {
                corrupt.push(CorruptLine {
                    line: lineno,
                    error: e.to_string(),
                });
                continue;
            }
        };
        if text.trim().is_empty() {
            continue;
        }
        if lineno == 1 {
            if let Ok(h) = serde_json::from_str::<SessionHeader>(text) {
                if h.format == LOG_FORMAT {
                    header = Some(h);
                    continue;
                }
            }
        }
        match serde_json::from_str::<EventRecord>(text) {
            Ok(record) => folder.push(record),
            Err(e) => corrupt.push(CorruptLine {
                line: lineno,
                error: e.to_string(),
            }),
        }
    }
    Ok(folder.finish(header, corrupt))
}

pub fn load_session(path: impl AsRef<Path>) -> Result<Session, StoreError> {
    parse_session(BufReader::new(File::open(path)?))
}
