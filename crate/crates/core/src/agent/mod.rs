//! The participant runtime: the shipped participant behavior driven by a
//! pluggable [`Processor`], plus response pacing and survey answering.
//!
//! [`Participant`] is sans-IO, like the hotel. Feed it envelopes from the world
//! and timer ticks; it returns the envelopes to send.

mod llm;
mod processor;
mod scripted;
pub mod verdict;

use tracing::debug;

use crate::clock::Millis;
use crate::fsa::{self, ActionRegistry, Behavior, FsaError};
use crate::protocol::{Envelope, ErrorCode, JoinToken, Payload, ProfileSubmission, ProxyLabel, Verdict};
use crate::rng::{fork, SimRng};

pub use llm::{LlmConfig, LlmError, LlmProcessor, DEFAULT_SURVEY_TEMPLATE};
pub use processor::{
    render_history, ConversationHistory, DelayPolicy, HistoryEntry, HumanBridge, HumanFeed, HumanInput, Pacing,
    Processor, HISTORY_HEADER,
};
pub use scripted::{inject_typo, Script, ScriptError, ScriptLine, ScriptedProcessor, VerdictStrategy};
pub use verdict::{parse_verdict, verdict_from_reply, UnparseableReply};

/// When the next utterance is due under `policy`.
pub fn decide_speak(now: Millis, policy: &DelayPolicy, rng: &mut SimRng) -> Millis {
    now + policy.sample(rng)
}

#[derive(Debug, Clone)]
pub struct ParticipantConfig {
    pub agent_id: String,
    pub display_name: String,
    pub profile: ProfileSubmission,
    pub delay: DelayPolicy,
    /// Leave the world after this many rounds.
    pub max_rounds: Option<u32>,
    pub seed: u64,
}

impl ParticipantConfig {
    pub fn new(agent_id: impl Into<String>) -> Self {
        let agent_id = agent_id.into();
        Self {
            display_name: agent_id.clone(),
            agent_id,
            profile: ProfileSubmission {
                background: "other:unspecified".into(),
                ai_experience: 3,
            },
            delay: DelayPolicy::default(),
            max_rounds: None,
            seed: 0,
        }
    }
}

pub struct ParticipantCore {
    config: ParticipantConfig,
    processor: Box<dyn Processor>,
    pacing: Pacing,
    rng: SimRng,
    now: Millis,
    token: Option<JoinToken>,
    seq: u64,
    out: Vec<Envelope>,
    join_sent: bool,
    history: Option<ConversationHistory>,
    next_speak: Option<Millis>,
    survey: Option<Vec<ProxyLabel>>,
    next_survey_poll: Option<Millis>,
    rounds_done: u32,
    leave_requested: bool,
    errors: Vec<(ErrorCode, String)>,
    sent_verdicts: Vec<Verdict>,
}

pub struct Participant {
    core: ParticipantCore,
    behavior: Behavior,
    registry: ActionRegistry<ParticipantCore, Payload>,
    state: String,
    transitions: u64,
}

impl Participant {
    pub fn new(config: ParticipantConfig, processor: Box<dyn Processor>) -> Self {
        let behavior = fsa::participant_behavior();
        let registry = participant_registry();
        registry.bind(&behavior).expect("participant actions cover the shipped behavior");
        let rng = fork(config.seed, &format!("delay/{}", config.agent_id));
        let pacing = processor.pacing();
        Self {
            state: behavior.initial.clone(),
            behavior,
            registry,
            transitions: 0,
            core: ParticipantCore {
                config,
                processor,
                pacing,
                rng,
                now: 0,
                token: None,
                seq: 0,
                out: Vec::new(),
                join_sent: false,
                history: None,
                next_speak: None,
                survey: None,
                next_survey_poll: None,
                rounds_done: 0,
                leave_requested: false,
                errors: Vec::new(),
                sent_verdicts: Vec::new(),
            },
        }
    }

    /// Checks that every action `behavior` names is one participants implement.
    pub fn check_behavior(behavior: &Behavior) -> Result<(), FsaError> {
        participant_registry().bind(behavior)
    }

    pub fn agent_id(&self) -> &str {
        &self.core.config.agent_id
    }

    pub fn state(&self) -> &str {
        &self.state
    }

    pub fn transitions(&self) -> u64 {
        self.transitions
    }

    pub fn rounds_done(&self) -> u32 {
        self.core.rounds_done
    }

    pub fn token(&self) -> Option<&JoinToken> {
        self.core.token.as_ref()
    }

    pub fn errors(&self) -> &[(ErrorCode, String)] {
        &self.core.errors
    }

    pub fn history(&self) -> Option<&ConversationHistory> {
        self.core.history.as_ref()
    }

    pub fn sent_verdicts(&self) -> &[Verdict] {
        &self.core.sent_verdicts
    }

    /// Steps the behavior from its current state; from `outside` this sends the join.
    pub fn start(&mut self, now: Millis) -> Vec<Envelope> {
        self.core.now = self.core.now.max(now);
        self.settle();
        std::mem::take(&mut self.core.out)
    }

    pub fn handle(&mut self, now: Millis, env: Envelope) -> Vec<Envelope> {
        self.core.now = self.core.now.max(now);
        match &env.payload {
            Payload::Ping => self.core.send(Payload::Ping),
            Payload::Error { code, message } => {
                debug!(agent = %self.core.config.agent_id, ?code, "world reported: {message}");
                self.core.errors.push((*code, message.clone()));
            }
            payload => match fsa::handle_event(&self.behavior, &self.state, &self.registry, &mut self.core, payload) {
                Ok(out) if out.handled => {
                    self.state = out.state;
                    self.transitions += 1;
                }
                Ok(_) => debug!(agent = %self.core.config.agent_id, state = %self.state, "ignoring {}", payload.kind()),
                Err(e) => tracing::error!("participant action failed: {e}"),
            },
        }
        self.settle();
        std::mem::take(&mut self.core.out)
    }

    /// Timer wakeup.
    pub fn tick(&mut self, now: Millis) -> Vec<Envelope> {
        self.start(now)
    }

    /// Asks the participant to leave once it is back in the hall.
    pub fn request_leave(&mut self, now: Millis) -> Vec<Envelope> {
        self.core.leave_requested = true;
        self.start(now)
    }

    /// Forgets the connection after it dropped; the next [`start`](Self::start)
    /// rejoins presenting the token obtained earlier.
    pub fn reset_connection(&mut self) {
        self.state = self.behavior.initial.clone();
        let c = &mut self.core;
        c.join_sent = false;
        c.history = None;
        c.next_speak = None;
        c.survey = None;
        c.next_survey_poll = None;
    }

    pub fn has_left(&self) -> bool {
        self.state == "left"
    }

    /// When the participant next wants a [`tick`](Self::tick).
    pub fn next_wake(&self) -> Option<Millis> {
        match self.state.as_str() {
            "chatting" => self.core.next_speak,
            "surveying" => self.core.next_survey_poll,
            _ => None,
        }
    }

    fn settle(&mut self) {
        for _ in 0..64 {
            match fsa::step(&self.behavior, &self.state, &self.registry, &mut self.core) {
                Ok(out) if out.fired.is_some() => {
                    self.state = out.state;
                    self.transitions += 1;
                }
                Ok(_) => return,
                Err(e) => {
                    tracing::error!("participant action failed: {e}");
                    return;
                }
            }
        }
    }
}

impl ParticipantCore {
    fn send(&mut self, payload: Payload) {
        self.seq += 1;
        self.out.push(Envelope {
            seq: self.seq,
            sender: self.config.agent_id.clone(),
            token: self.token.clone(),
            payload,
            sent_at: self.now,
        });
    }

    fn schedule_after_start(&mut self) {
        let started = self.history.as_ref().map_or(self.now, |h| h.started_at);
        self.next_speak = match &self.pacing {
            Pacing::Reactive => Some(decide_speak(self.now, &self.config.delay, &mut self.rng)),
            Pacing::Script(offsets) => offsets.first().map(|o| (started + o).max(self.now)),
            Pacing::Poll(i) => Some(self.now + i),
        };
    }

    fn reschedule_after_own(&mut self) {
        let Some(h) = &self.history else {
            return;
        };
        self.next_speak = match &self.pacing {
            Pacing::Reactive => None,
            Pacing::Script(offsets) => offsets.get(h.own_messages()).map(|o| (h.started_at + o).max(self.now)),
            Pacing::Poll(i) => Some(self.now + i),
        };
    }

    fn speak_if_due(&mut self) -> bool {
        let Some(due) = self.next_speak else {
            return false;
        };
        let Some(h) = &self.history else {
            return false;
        };
        if self.now < due || self.now >= h.deadline {
            return false;
        }
        let (room_id, my_proxy) = (h.room_id.clone(), h.my_proxy);
        match self.processor.generate(h) {
            Some(text) => {
                self.send(Payload::ChatText {
                    room_id,
                    text: text.clone(),
                });
                let now = self.now;
                if let Some(h) = &mut self.history {
                    h.push(my_proxy, text, now);
                }
                self.reschedule_after_own();
                true
            }
            None => {
                self.next_speak = match &self.pacing {
                    Pacing::Poll(i) => Some(self.now + i),
                    _ => None,
                };
                false
            }
        }
    }

    fn answer_survey(&mut self) -> bool {
        let Some(options) = self.survey.clone() else {
            return false;
        };
        let Some(h) = self.history.clone() else {
            return false;
        };
        match self.processor.verdict(&h, &options) {
            Some(mut v) => {
                v.judged_human.retain(|l| options.contains(l));
                self.sent_verdicts.push(v.clone());
                self.send(Payload::SurveySubmit {
                    room_id: h.room_id,
                    verdict: v,
                });
                self.survey = None;
                self.next_survey_poll = None;
                true
            }
            None => {
                self.next_survey_poll = match self.pacing {
                    Pacing::Poll(i) => Some(self.now + i),
                    _ => None,
                };
                false
            }
        }
    }
}

fn participant_registry() -> ActionRegistry<ParticipantCore, Payload> {
    let mut reg = ActionRegistry::new();
    reg.register("join", |c: &mut ParticipantCore, _| {
        if c.join_sent {
            return Ok(false);
        }
        c.join_sent = true;
        let p = Payload::Join {
            agent_id: c.config.agent_id.clone(),
            display_name: c.config.display_name.clone(),
        };
        c.send(p);
        Ok(true)
    })
    .register("receive_welcome", |c: &mut ParticipantCore, p: Option<&Payload>| {
        Ok(match p {
            Some(Payload::Welcome { token, .. }) => {
                c.token = Some(token.clone());
                true
            }
            _ => false,
        })
    })
    .register("fill_profile", |c: &mut ParticipantCore, p: Option<&Payload>| {
        Ok(match p {
            Some(Payload::ProfileFormRequest { .. }) => {
                let form = c.config.profile.clone();
                c.send(Payload::ProfileSubmit { form });
                true
            }
            _ => false,
        })
    })
    .register("enter_hall", |_c: &mut ParticipantCore, p: Option<&Payload>| {
        Ok(matches!(p, Some(Payload::EnterHall)))
    })
    .register("move_to_room", |c: &mut ParticipantCore, p: Option<&Payload>| {
        Ok(match p {
            Some(Payload::RoomStart {
                room_id,
                my_proxy,
                peer_proxies,
                deadline,
            }) => {
                c.history = Some(ConversationHistory::new(
                    room_id.clone(),
                    *my_proxy,
                    peer_proxies.clone(),
                    c.now,
                    *deadline,
                ));
                c.schedule_after_start();
                true
            }
            _ => false,
        })
    })
    .register("leave", |c: &mut ParticipantCore, _| {
        let done = c.config.max_rounds.is_some_and(|m| c.rounds_done >= m);
        if done || c.leave_requested {
            c.send(Payload::Leave);
            Ok(true)
        } else {
            Ok(false)
        }
    })
    .register("do_gen", |c: &mut ParticipantCore, p: Option<&Payload>| {
        let Some(Payload::RoomRelay {
            room_id,
            from_proxy,
            text,
        }) = p
        else {
            return Ok(false);
        };
        let now = c.now;
        match &mut c.history {
            Some(h) if h.room_id == *room_id => h.push(*from_proxy, text.clone(), now),
            _ => return Ok(false),
        }
        if c.pacing == Pacing::Reactive {
            c.next_speak = Some(decide_speak(now, &c.config.delay, &mut c.rng));
        }
        Ok(true)
    })
    .register("ask_gen", |c: &mut ParticipantCore, _| Ok(c.speak_if_due()))
    .register("receive_survey", |c: &mut ParticipantCore, p: Option<&Payload>| {
        Ok(match p {
            Some(Payload::SurveyPrompt { room_id, options }) if c.history.as_ref().is_some_and(|h| h.room_id == *room_id) => {
                c.survey = Some(options.clone());
                c.next_speak = None;
                true
            }
            _ => false,
        })
    })
    .register("answer_survey", |c: &mut ParticipantCore, _| Ok(c.answer_survey()))
    .register("receive_result", |c: &mut ParticipantCore, p: Option<&Payload>| {
        Ok(match p {
            Some(Payload::RoundResult { .. }) => {
                c.rounds_done += 1;
                c.history = None;
                c.survey = None;
                c.next_survey_poll = None;
                true
            }
            _ => false,
        })
    });
    reg
}
