//! The world node: the room manager that admits guests, groups them into
//! anonymous rooms, relays their messages, runs the timed rounds, collects
//! the surveys and sends everyone back to the hall.
//!
//! [`Hotel`] is a sans-IO state machine. A driver (the network server or the
//! simulator) feeds it [`Inbound`] events stamped with the current time and
//! ships the returned [`Outbound`] frames. All hotel state lives here and is
//! only touched from the driver's single event loop. The manager's own work
//! loop is the shipped manager behavior, executed by the [`crate::fsa`] engine
//! after every event.

mod config;
mod room;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;
use tracing::{debug, error, warn};

use crate::clock::{millis_to_secs, Millis};
use crate::fsa::{self, ActionRegistry, Behavior, FsaError};
use crate::protocol::{
    decode, encode_line, sign_token, verify_token, AgentId, Background, Envelope, ErrorCode, JoinToken, Payload,
    ProfileForm, ProtocolError, ProxyLabel, RoomId, TokenKey, Verdict,
};
use crate::rng::{fork, SimRng};
use crate::roster::Roster;
use crate::store::{Event, RoundRecord, SessionLog, TranscriptEntry};

pub use config::{ConfigError, HotelConfig, DEFAULT_OVERVIEW};
pub use room::{assign_proxies, form_rooms, Room, RoomPhase};

/// Sender id used on every envelope the manager emits.
pub const MANAGER_ID: &str = "room-manager";

/// Transport-level connection handle assigned by the driver.
pub type ConnId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Inbound {
    Connected(ConnId),
    /// One received line.
    Frame(ConnId, String),
    Closed(ConnId),
    /// A timer fired; the hotel checks its deadlines.
    Tick,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outbound {
    Send { conn: ConnId, frame: String },
    Close { conn: ConnId },
}

#[derive(Debug, Error)]
pub enum HotelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("manager behavior: {0}")]
    Behavior(#[from] FsaError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GuestStatus {
    Greeting,
    Hall,
    InRoom(RoomId),
    Surveying(RoomId),
    Disconnected,
}

#[derive(Debug, Clone)]
pub struct Guest {
    pub agent: AgentId,
    pub profile: Option<ProfileForm>,
    pub status: GuestStatus,
    pub connected_since: Millis,
    conn: Option<ConnId>,
}

impl Guest {
    pub fn is_connected(&self) -> bool {
        self.conn.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HotelStats {
    pub frames_in: u64,
    pub malformed: u64,
    pub auth_failures: u64,
    pub dropped_replays: u64,
    pub relays: u64,
    pub chats_accepted: u64,
    pub chats_rejected: u64,
    pub rounds_closed: u64,
    pub liveness_disconnects: u64,
}

#[derive(Debug, Default)]
struct ConnState {
    agent: Option<String>,
    last_seq: Option<u64>,
}

#[derive(Debug)]
struct LivenessProbe {
    deadline: Millis,
    targets: Vec<String>,
    /// Targets that sent anything since the ping went out.
    heard: BTreeSet<String>,
}

/// An authenticated message offered to the manager's triggered edges.
#[derive(Debug, Clone)]
pub struct Interaction {
    pub conn: ConnId,
    pub sender: String,
    pub seq: u64,
    pub token: Option<JoinToken>,
    pub payload: Payload,
}

/// All mutable hotel state. Manager actions operate on this.
pub struct HotelCore {
    config: HotelConfig,
    key: TokenKey,
    roster: Roster,
    log: SessionLog,
    store_failed: bool,
    rooms_rng: SimRng,
    proxies_rng: SimRng,
    now: Millis,
    guests: BTreeMap<String, Guest>,
    conns: BTreeMap<ConnId, ConnState>,
    queue: VecDeque<String>,
    rooms: BTreeMap<RoomId, Room>,
    next_room: u64,
    out: Vec<Outbound>,
    out_seq: u64,
    completed: Vec<RoundRecord>,
    probe: Option<LivenessProbe>,
    next_periodic_probe: Option<Millis>,
    progress: bool,
    recycled: Vec<String>,
    stats: HotelStats,
}

pub struct Hotel {
    core: HotelCore,
    behavior: Behavior,
    registry: ActionRegistry<HotelCore, Interaction>,
    state: String,
}

impl Hotel {
    /// Builds a hotel running the shipped manager behavior.
    pub fn new(config: HotelConfig, roster: Roster, log: SessionLog, key: TokenKey, seed: u64) -> Result<Self, HotelError> {
        Self::with_behavior(config, roster, log, key, seed, fsa::manager_behavior())
    }

    pub fn with_behavior(
        config: HotelConfig,
        roster: Roster,
        log: SessionLog,
        key: TokenKey,
        seed: u64,
        behavior: Behavior,
    ) -> Result<Self, HotelError> {
        config.validate()?;
        let registry = manager_registry();
        registry.bind(&behavior)?;
        let state = behavior.initial.clone();
        Ok(Self {
            core: HotelCore {
                config,
                key,
                roster,
                log,
                store_failed: false,
                rooms_rng: fork(seed, "hotel/rooms"),
                proxies_rng: fork(seed, "hotel/proxies"),
                now: 0,
                guests: BTreeMap::new(),
                conns: BTreeMap::new(),
                queue: VecDeque::new(),
                rooms: BTreeMap::new(),
                next_room: 1,
                out: Vec::new(),
                out_seq: 0,
                completed: Vec::new(),
                probe: None,
                next_periodic_probe: None,
                progress: false,
                recycled: Vec::new(),
                stats: HotelStats::default(),
            },
            behavior,
            registry,
            state,
        })
    }

    /// Checks that every action `behavior` names is one the manager implements.
    pub fn check_behavior(behavior: &Behavior) -> Result<(), FsaError> {
        manager_registry().bind(behavior)
    }

    /// Processes one event at time `now` and returns the frames to ship.
    pub fn handle(&mut self, now: Millis, input: Inbound) -> Vec<Outbound> {
        self.core.now = self.core.now.max(now);
        if self.core.next_periodic_probe.is_none() {
            self.core.next_periodic_probe = self.core.config.liveness_interval().map(|i| self.core.now + i);
        }
        match input {
            Inbound::Connected(conn) => {
                self.core.conns.entry(conn).or_default();
            }
            Inbound::Frame(conn, line) => self.on_frame(conn, &line),
            Inbound::Closed(conn) => self.core.on_closed(conn),
            Inbound::Tick => {}
        }
        self.run_cycle();
        std::mem::take(&mut self.core.out)
    }

    fn on_frame(&mut self, conn: ConnId, line: &str) {
        let core = &mut self.core;
        core.stats.frames_in += 1;
        core.conns.entry(conn).or_default();
        let env = match decode(line.as_bytes()) {
            Ok(env) => env,
            Err(e) => {
                core.stats.malformed += 1;
                let code = match e {
                    ProtocolError::MalformedFrame(_) => ErrorCode::MalformedFrame,
                    ProtocolError::UnknownVariant(_) => ErrorCode::UnknownVariant,
                };
                core.send(conn, Payload::error(code, e.to_string()));
                return;
            }
        };
        let interaction = if matches!(env.payload, Payload::Join { .. }) {
            Interaction {
                conn,
                sender: env.sender,
                seq: env.seq,
                token: env.token,
                payload: env.payload,
            }
        } else {
            let Some(agent) = core.conns[&conn].agent.clone() else {
                core.send(conn, Payload::error(ErrorCode::NotJoined, "join the world first"));
                return;
            };
            let Some(token) = env.token.as_ref() else {
                core.auth_fail(conn, "missing token");
                return;
            };
            if let Err(e) = verify_token(token, &core.key, millis_to_secs(core.now)) {
                core.auth_fail(conn, &e.to_string());
                return;
            }
            if token.subject != agent || env.sender != agent {
                core.auth_fail(conn, "token subject does not match sender");
                return;
            }
            let conn_state = core.conns.get_mut(&conn).expect("checked above");
            if conn_state.last_seq.is_some_and(|last| env.seq <= last) {
                debug!(conn, seq = env.seq, "dropping non-increasing seq");
                core.stats.dropped_replays += 1;
                return;
            }
            conn_state.last_seq = Some(env.seq);
            if let Some(p) = core.probe.as_mut() {
                if p.targets.contains(&agent) {
                    p.heard.insert(agent.clone());
                }
            }
            Interaction {
                conn,
                sender: agent,
                seq: env.seq,
                token: env.token,
                payload: env.payload,
            }
        };
        match fsa::handle_event(&self.behavior, &self.state, &self.registry, &mut self.core, &interaction) {
            Ok(out) if out.handled => self.state = out.state,
            Ok(_) => {
                let kind = interaction.payload.kind();
                self.core
                    .send(conn, Payload::error(ErrorCode::Unexpected, format!("{kind} is not expected here")));
            }
            Err(e) => error!("manager action failed: {e}"),
        }
    }

    // Runs the manager loop back to its initial state, repeating while work
    // is still being done (e.g. recycled guests can fill a new room).
    fn run_cycle(&mut self) {
        let loop_len = self.behavior.states.len().max(1);
        for _ in 0..4 {
            self.core.progress = false;
            for _ in 0..loop_len {
                match fsa::step(&self.behavior, &self.state, &self.registry, &mut self.core) {
                    Ok(out) => {
                        let moved = out.fired.is_some();
                        self.state = out.state;
                        if !moved || self.state == self.behavior.initial {
                            break;
                        }
                    }
                    Err(e) => {
                        error!("manager action failed: {e}");
                        break;
                    }
                }
            }
            if !self.core.progress {
                break;
            }
        }
    }

    /// Earliest time at which the hotel needs a [`Inbound::Tick`].
    pub fn next_deadline(&self) -> Option<Millis> {
        let core = &self.core;
        let rooms = core.rooms.values().map(|r| match r.phase {
            RoomPhase::Chatting => r.deadline,
            RoomPhase::Surveying { until } => until,
            _ => core.now,
        });
        rooms
            .chain(core.probe.as_ref().map(|p| p.deadline))
            .chain(core.next_periodic_probe)
            .min()
    }

    pub fn now(&self) -> Millis {
        self.core.now
    }

    pub fn config(&self) -> &HotelConfig {
        &self.core.config
    }

    pub fn manager_state(&self) -> &str {
        &self.state
    }

    /// Rounds closed so far, in closing order.
    pub fn completed_rounds(&self) -> &[RoundRecord] {
        &self.core.completed
    }

    pub fn guest(&self, agent_id: &str) -> Option<&Guest> {
        self.core.guests.get(agent_id)
    }

    pub fn guests(&self) -> impl Iterator<Item = &Guest> {
        self.core.guests.values()
    }

    pub fn queue(&self) -> impl Iterator<Item = &str> {
        self.core.queue.iter().map(String::as_str)
    }

    pub fn room(&self, room_id: &str) -> Option<&Room> {
        self.core.rooms.get(room_id)
    }

    pub fn active_rooms(&self) -> usize {
        self.core.rooms.len()
    }

    /// Agent ids sent back to the check-in queue after a round, in order.
    pub fn recycled(&self) -> &[String] {
        &self.core.recycled
    }

    pub fn stats(&self) -> &HotelStats {
        &self.core.stats
    }

    /// True once a session log write failed; no new rooms are formed after that.
    pub fn store_failed(&self) -> bool {
        self.core.store_failed
    }

    /// No rooms in progress and no liveness probe pending.
    pub fn is_quiescent(&self) -> bool {
        self.core.rooms.is_empty() && self.core.probe.is_none()
    }
}

fn manager_registry() -> ActionRegistry<HotelCore, Interaction> {
    let mut reg = ActionRegistry::new();
    reg.register("assign_guests", |core: &mut HotelCore, _| {
        core.assign_guests();
        Ok(true)
    })
    .register("check_rooms", |core: &mut HotelCore, _| {
        core.start_conversations();
        Ok(true)
    })
    .register("collect_messages", |core: &mut HotelCore, _| {
        core.close_expired_rooms();
        Ok(true)
    })
    .register("prepare_surveys", |core: &mut HotelCore, _| {
        core.prepare_surveys();
        Ok(true)
    })
    .register("greet", |core: &mut HotelCore, i: Option<&Interaction>| {
        Ok(match i {
            Some(i @ Interaction {
                payload: Payload::Join { .. },
                ..
            }) => {
                core.greet_guest(i);
                true
            }
            _ => false,
        })
    })
    .register("intake_profile", |core: &mut HotelCore, i: Option<&Interaction>| {
        Ok(match i {
            Some(Interaction {
                sender,
                payload: Payload::ProfileSubmit { form },
                ..
            }) => {
                core.collect_profile(sender, ProfileForm::validate(form));
                true
            }
            _ => false,
        })
    })
    .register("do_gen", |core: &mut HotelCore, i: Option<&Interaction>| {
        Ok(match i {
            Some(Interaction {
                sender,
                payload: Payload::ChatText { room_id, text },
                ..
            }) => {
                if let Err(code) = core.broadcast(room_id, sender, text) {
                    core.stats.chats_rejected += 1;
                    let msg = match code {
                        ErrorCode::RoomClosed => "the conversation is over; message dropped",
                        _ => "you are not in that room",
                    };
                    core.send_to(sender, Payload::error(code, msg));
                }
                true
            }
            _ => false,
        })
    })
    .register("ask_gen", |core: &mut HotelCore, i: Option<&Interaction>| {
        Ok(match i {
            Some(Interaction {
                sender,
                payload: Payload::SurveySubmit { room_id, verdict },
                ..
            }) => {
                core.record_verdict(room_id, sender, verdict.clone());
                true
            }
            _ => false,
        })
    })
    .register("keep_alive", |_core: &mut HotelCore, i: Option<&Interaction>| {
        Ok(matches!(
            i,
            Some(Interaction {
                payload: Payload::Ping,
                ..
            })
        ))
    })
    .register("farewell", |core: &mut HotelCore, i: Option<&Interaction>| {
        Ok(match i {
            Some(Interaction {
                conn,
                sender,
                payload: Payload::Leave,
                ..
            }) => {
                core.out.push(Outbound::Close { conn: *conn });
                core.conns.remove(conn);
                core.detach_guest(sender, "leave");
                true
            }
            _ => false,
        })
    });
    reg
}

impl HotelCore {
    fn log(&mut self, event: Event) {
        if let Err(e) = self.log.append_event(self.now, event) {
            if !self.store_failed {
                error!("session log write failed, no new rooms will be formed: {e}");
            }
            self.store_failed = true;
        }
    }

    fn send(&mut self, conn: ConnId, payload: Payload) {
        self.out_seq += 1;
        let env = Envelope {
            seq: self.out_seq,
            sender: MANAGER_ID.into(),
            token: None,
            payload,
            sent_at: self.now,
        };
        self.out.push(Outbound::Send {
            conn,
            frame: encode_line(&env),
        });
    }

    fn send_to(&mut self, agent_id: &str, payload: Payload) {
        if let Some(conn) = self.guests.get(agent_id).and_then(|g| g.conn) {
            self.send(conn, payload);
        }
    }

    fn auth_fail(&mut self, conn: ConnId, why: &str) {
        self.stats.auth_failures += 1;
        warn!(conn, "authentication failed: {why}");
        self.send(conn, Payload::error(ErrorCode::AuthFailed, why));
        self.out.push(Outbound::Close { conn });
        self.on_closed(conn);
    }

    fn on_closed(&mut self, conn: ConnId) {
        if let Some(ConnState { agent: Some(agent), .. }) = self.conns.remove(&conn) {
            if self.guests.get(&agent).is_some_and(|g| g.conn == Some(conn)) {
                self.detach_guest(&agent, "disconnected");
            }
        }
    }

    /// Marks a guest disconnected: out of the queue, no longer awaited by its room.
    fn detach_guest(&mut self, agent_id: &str, reason: &str) {
        let Some(guest) = self.guests.get_mut(agent_id) else {
            return;
        };
        guest.conn = None;
        let status = std::mem::replace(&mut guest.status, GuestStatus::Disconnected);
        if let GuestStatus::InRoom(r) | GuestStatus::Surveying(r) = &status {
            if let Some(room) = self.rooms.get_mut(r) {
                room.awaiting.remove(agent_id);
            }
        }
        self.queue.retain(|q| q != agent_id);
        self.log(Event::GuestLeft {
            agent_id: agent_id.to_owned(),
            reason: reason.to_owned(),
        });
    }

    /// Admits a guest presenting a `Join`, superseding any previous session
    /// of the same id, and sends the welcome and the profile form.
    fn greet_guest(&mut self, i: &Interaction) {
        let Payload::Join {
            agent_id,
            display_name,
        } = &i.payload
        else {
            return;
        };
        let conn = i.conn;
        if agent_id.trim().is_empty() || agent_id == MANAGER_ID || i.sender != *agent_id {
            self.auth_fail(conn, "invalid agent id");
            return;
        }
        if let Some(token) = &i.token {
            if let Err(e) = verify_token(token, &self.key, millis_to_secs(self.now)) {
                self.auth_fail(conn, &e.to_string());
                return;
            }
            if token.subject != *agent_id {
                self.auth_fail(conn, "token subject does not match agent id");
                return;
            }
        }
        if self.conns.get(&conn).is_some_and(|c| c.agent.as_ref().is_some_and(|a| a != agent_id)) {
            self.send(conn, Payload::error(ErrorCode::Unexpected, "connection already bound to another agent"));
            return;
        }
        let previous_conn = self.guests.get(agent_id).and_then(|g| g.conn);
        if let Some(old) = previous_conn.filter(|old| *old != conn) {
            if i.token.is_none() {
                self.auth_fail(conn, "agent id already connected");
                return;
            }
            self.send(old, Payload::error(ErrorCode::Superseded, "a newer session took over"));
            self.out.push(Outbound::Close { conn: old });
            self.conns.remove(&old);
            self.detach_guest(agent_id, "superseded");
        } else if previous_conn == Some(conn) {
            // Same connection joining twice: treat as a fresh greeting.
            self.detach_guest(agent_id, "rejoined");
        }
        let token = sign_token(
            agent_id,
            &self.config.world,
            self.config.token_ttl_s,
            &self.key,
            millis_to_secs(self.now),
        );
        let profile = self.guests.get(agent_id).and_then(|g| g.profile.clone());
        self.guests.insert(
            agent_id.clone(),
            Guest {
                agent: AgentId {
                    id: agent_id.clone(),
                    display_name: display_name.clone(),
                },
                profile,
                status: GuestStatus::Greeting,
                connected_since: self.now,
                conn: Some(conn),
            },
        );
        let cs = self.conns.entry(conn).or_default();
        cs.agent = Some(agent_id.clone());
        cs.last_seq = Some(i.seq);
        self.log(Event::GuestJoined {
            agent_id: agent_id.clone(),
            display_name: display_name.clone(),
        });
        let overview = self.config.overview.clone();
        self.send(conn, Payload::Welcome { token, overview });
        let mut backgrounds: Vec<String> = Background::NAMED.iter().map(|s| s.to_string()).collect();
        backgrounds.push("other:<text>".into());
        self.send(
            conn,
            Payload::ProfileFormRequest {
                backgrounds,
                ai_experience_min: 1,
                ai_experience_max: 5,
            },
        );
    }

    fn collect_profile(&mut self, agent_id: &str, form: Result<ProfileForm, crate::protocol::InvalidForm>) {
        let Some(guest) = self.guests.get(agent_id) else {
            return;
        };
        if guest.status != GuestStatus::Greeting {
            self.send_to(agent_id, Payload::error(ErrorCode::Unexpected, "profile already recorded"));
            return;
        }
        let form = match form {
            Ok(f) => f,
            Err(e) => {
                self.send_to(agent_id, Payload::error(ErrorCode::InvalidForm, e.0));
                return;
            }
        };
        let guest = self.guests.get_mut(agent_id).expect("checked above");
        guest.profile = Some(form.clone());
        guest.status = GuestStatus::Hall;
        self.log(Event::ProfileRecorded {
            agent_id: agent_id.to_owned(),
            profile: form,
        });
        self.enqueue(agent_id);
        self.send_to(agent_id, Payload::EnterHall);
    }

    fn enqueue(&mut self, agent_id: &str) {
        if !self.queue.iter().any(|q| q == agent_id) {
            self.queue.push_back(agent_id.to_owned());
            self.progress = true;
        }
    }

    /// Forms rooms from the queue. A new turn only starts once the pending
    /// liveness check has settled.
    fn assign_guests(&mut self) {
        self.check_liveness();
        if self.store_failed || self.probe.is_some() {
            return;
        }
        let size = self.config.room_size;
        for members in form_rooms(&mut self.queue, size, &mut self.rooms_rng) {
            let proxy_of = assign_proxies(&members, &mut self.proxies_rng);
            let room_id = format!("room-{:04}", self.next_room);
            self.next_room += 1;
            let room = Room::new(room_id.clone(), members, proxy_of, self.now, self.config.round_duration());
            for m in &room.members {
                if let Some(g) = self.guests.get_mut(m) {
                    g.status = GuestStatus::InRoom(room_id.clone());
                }
            }
            self.log(Event::RoomFormed {
                room_id: room_id.clone(),
                members: room.members.clone(),
                started_at: room.started_at,
                deadline: room.deadline,
            });
            self.log(Event::ProxyAssigned {
                room_id: room_id.clone(),
                proxy_of: room.proxy_of.clone(),
            });
            self.rooms.insert(room_id, room);
            self.progress = true;
        }
    }

    /// Announces freshly formed rooms: every member learns only its own proxy
    /// and its peers' labels.
    fn start_conversations(&mut self) {
        let formed: Vec<RoomId> = self
            .rooms
            .values()
            .filter(|r| r.phase == RoomPhase::Formed)
            .map(|r| r.room_id.clone())
            .collect();
        for room_id in formed {
            let room = self.rooms.get_mut(&room_id).expect("listed above");
            room.phase = RoomPhase::Chatting;
            let starts: Vec<(String, Payload)> = room
                .members
                .iter()
                .map(|m| {
                    (
                        m.clone(),
                        Payload::RoomStart {
                            room_id: room_id.clone(),
                            my_proxy: room.proxy_of[m],
                            peer_proxies: room.options_for(m),
                            deadline: room.deadline,
                        },
                    )
                })
                .collect();
            for (m, p) in starts {
                if self.guests.get(&m).is_some_and(|g| g.status == GuestStatus::InRoom(room_id.clone())) {
                    self.send_to(&m, p);
                }
            }
            self.progress = true;
        }
    }

    /// Relays `text` from `sender` to every other member of the room under
    /// the sender's proxy label.
    fn broadcast(&mut self, room_id: &str, sender: &str, text: &str) -> Result<(), ErrorCode> {
        let in_room = self
            .guests
            .get(sender)
            .is_some_and(|g| matches!(&g.status, GuestStatus::InRoom(r) | GuestStatus::Surveying(r) if r == room_id));
        let room = match self.rooms.get_mut(room_id) {
            Some(r) if r.is_member(sender) && in_room => r,
            _ => return Err(ErrorCode::NotInRoom),
        };
        if room.phase != RoomPhase::Chatting || self.now >= room.deadline {
            return Err(ErrorCode::RoomClosed);
        }
        let max = self.config.max_message_chars;
        let truncated = text.chars().count() > max;
        let text: String = if truncated { text.chars().take(max).collect() } else { text.to_owned() };
        let from_proxy = room.proxy_of[sender];
        room.transcript.push(TranscriptEntry {
            at: self.now,
            from_proxy,
            text: text.clone(),
        });
        let peers: Vec<String> = room.members.iter().filter(|m| *m != sender).cloned().collect();
        self.stats.chats_accepted += 1;
        self.log(Event::Chat {
            room_id: room_id.to_owned(),
            from_proxy,
            text: text.clone(),
        });
        if truncated {
            self.send_to(
                sender,
                Payload::error(ErrorCode::MessageTruncated, format!("message truncated to {max} characters")),
            );
        }
        for peer in peers {
            let here = self
                .guests
                .get(&peer)
                .is_some_and(|g| g.status == GuestStatus::InRoom(room_id.to_owned()) && g.is_connected());
            if here {
                self.stats.relays += 1;
                self.send_to(
                    &peer,
                    Payload::RoomRelay {
                        room_id: room_id.to_owned(),
                        from_proxy,
                        text: text.clone(),
                    },
                );
            }
        }
        Ok(())
    }

    fn close_expired_rooms(&mut self) {
        let now = self.now;
        for room in self.rooms.values_mut() {
            if room.phase == RoomPhase::Chatting && now >= room.deadline {
                room.phase = RoomPhase::Closed;
                self.progress = true;
            }
        }
    }

    fn prepare_surveys(&mut self) {
        let closed: Vec<RoomId> = self
            .rooms
            .values()
            .filter(|r| r.phase == RoomPhase::Closed)
            .map(|r| r.room_id.clone())
            .collect();
        for room_id in closed {
            self.prompt_surveys(&room_id);
        }
        let now = self.now;
        let done: Vec<RoomId> = self
            .rooms
            .values()
            .filter(|r| matches!(r.phase, RoomPhase::Surveying { until } if r.awaiting.is_empty() || now >= until))
            .map(|r| r.room_id.clone())
            .collect();
        for room_id in done {
            self.collect_surveys(&room_id);
        }
    }

    /// Asks every member still connected which of the others were human.
    fn prompt_surveys(&mut self, room_id: &str) {
        let until = self.now + self.config.survey_timeout();
        let room = self.rooms.get_mut(room_id).expect("caller checked");
        room.phase = RoomPhase::Surveying { until };
        let members = room.members.clone();
        for m in members {
            let present = self
                .guests
                .get(&m)
                .is_some_and(|g| g.status == GuestStatus::InRoom(room_id.to_owned()) && g.is_connected());
            if !present {
                continue;
            }
            let room = self.rooms.get_mut(room_id).expect("caller checked");
            let options = room.options_for(&m);
            room.awaiting.insert(m.clone());
            if let Some(g) = self.guests.get_mut(&m) {
                g.status = GuestStatus::Surveying(room_id.to_owned());
            }
            self.log(Event::SurveyPrompted {
                room_id: room_id.to_owned(),
                agent_id: m.clone(),
                options: options.clone(),
            });
            self.send_to(
                &m,
                Payload::SurveyPrompt {
                    room_id: room_id.to_owned(),
                    options,
                },
            );
        }
        self.progress = true;
    }

    fn record_verdict(&mut self, room_id: &str, sender: &str, mut verdict: Verdict) {
        let Some(room) = self.rooms.get_mut(room_id) else {
            self.send_to(sender, Payload::error(ErrorCode::SurveyClosed, "no open survey for that room"));
            return;
        };
        if room.surveys.contains_key(sender) {
            debug!(room_id, sender, "ignoring duplicate survey answer");
            return;
        }
        if !matches!(room.phase, RoomPhase::Surveying { .. }) || !room.awaiting.contains(sender) {
            self.send_to(sender, Payload::error(ErrorCode::SurveyClosed, "no open survey for you in that room"));
            return;
        }
        let own = room.proxy_of.get(sender).copied();
        let valid: BTreeSet<ProxyLabel> = room.proxy_of.values().copied().collect();
        let before = verdict.judged_human.len();
        verdict.judged_human.retain(|l| Some(*l) != own && valid.contains(l));
        if verdict.judged_human.len() != before {
            warn!(room_id, sender, "verdict named its own or unknown proxies; stripped");
        }
        room.awaiting.remove(sender);
        room.surveys.insert(sender.to_owned(), verdict.clone());
        self.log(Event::VerdictRecorded {
            room_id: room_id.to_owned(),
            agent_id: sender.to_owned(),
            verdict,
        });
        self.progress = true;
    }

    /// Closes the round: resolves identities, persists the record and sends
    /// everyone who answered back to the check-in queue.
    fn collect_surveys(&mut self, room_id: &str) {
        let room = self.rooms.remove(room_id).expect("caller checked");
        for m in &room.members {
            if !room.surveys.contains_key(m) {
                self.log(Event::VerdictAbsent {
                    room_id: room_id.to_owned(),
                    agent_id: m.clone(),
                });
            }
        }
        let identities = room.identities();
        let truth: BTreeMap<String, _> = room
            .members
            .iter()
            .map(|m| (m.clone(), self.roster.label(m).cloned()))
            .collect();
        self.log(Event::RoundClosed {
            room_id: room_id.to_owned(),
            identities: identities.clone(),
            truth: truth.clone(),
        });
        let profiles = room
            .members
            .iter()
            .filter_map(|m| self.guests.get(m)?.profile.clone().map(|p| (m.clone(), p)))
            .collect();
        self.completed.push(RoundRecord {
            room_id: room.room_id.clone(),
            members: room.members.clone(),
            proxy_of: room.proxy_of.clone(),
            identities,
            started_at: room.started_at,
            deadline: room.deadline,
            closed_at: self.now,
            transcript: room.transcript.clone(),
            verdicts: room.members.iter().map(|m| (m.clone(), room.surveys.get(m).cloned())).collect(),
            truth,
            profiles,
        });
        self.stats.rounds_closed += 1;
        for m in &room.members {
            let Some(g) = self.guests.get_mut(m) else {
                continue;
            };
            if g.status != GuestStatus::Surveying(room_id.to_owned()) && g.status != GuestStatus::InRoom(room_id.to_owned()) {
                continue;
            }
            g.status = GuestStatus::Hall;
            let answered = room.surveys.contains_key(m);
            self.send_to(
                m,
                Payload::RoundResult {
                    room_id: room_id.to_owned(),
                    recorded: answered,
                },
            );
            if answered {
                self.enqueue(m);
                self.recycled.push(m.clone());
            }
        }
        self.progress = true;
        self.start_probe();
    }

    /// Pings every connected guest in the hall. Guests that return to the hall
    /// while a check is pending join it and push its deadline out.
    fn start_probe(&mut self) {
        let pending: BTreeSet<String> = self.probe.iter().flat_map(|p| p.targets.iter().cloned()).collect();
        let targets: Vec<String> = self
            .guests
            .values()
            .filter(|g| g.is_connected() && g.status == GuestStatus::Hall && !pending.contains(&g.agent.id))
            .map(|g| g.agent.id.clone())
            .collect();
        if targets.is_empty() {
            return;
        }
        for t in &targets {
            self.send_to(t, Payload::Ping);
        }
        let deadline = self.now + self.config.liveness_grace();
        match &mut self.probe {
            Some(p) => {
                p.targets.extend(targets);
                p.deadline = p.deadline.max(deadline);
            }
            None => {
                self.probe = Some(LivenessProbe {
                    deadline,
                    targets,
                    heard: BTreeSet::new(),
                })
            }
        }
    }

    /// Resolves the liveness probe once every target answered or the grace
    /// period ran out: silent guests are disconnected, guests that answered
    /// and sit in the hall outside the queue are re-admitted.
    fn check_liveness(&mut self) {
        if let Some(at) = self.next_periodic_probe {
            if self.now >= at {
                self.start_probe();
                self.next_periodic_probe = self.config.liveness_interval().map(|i| self.now + i);
            }
        }
        let due = self.probe.as_ref().is_some_and(|p| {
            self.now >= p.deadline
                || p.targets
                    .iter()
                    .all(|t| p.heard.contains(t) || !self.guests.get(t).is_some_and(Guest::is_connected))
        });
        if !due {
            return;
        }
        let probe = self.probe.take().expect("checked");
        for t in probe.targets {
            let Some(g) = self.guests.get(&t) else {
                continue;
            };
            let Some(conn) = g.conn else {
                continue;
            };
            if !probe.heard.contains(&t) {
                self.stats.liveness_disconnects += 1;
                self.out.push(Outbound::Close { conn });
                self.conns.remove(&conn);
                self.detach_guest(&t, "liveness");
            } else if g.status == GuestStatus::Hall {
                self.enqueue(&t);
            }
        }
        self.progress = true;
    }
}
