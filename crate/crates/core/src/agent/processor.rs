use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clock::{secs_to_millis, Millis};
use crate::protocol::{ProxyLabel, RoomId, Verdict};
use crate::rng::SimRng;

/// One line of a room conversation as seen by a participant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub from_proxy: ProxyLabel,
    pub text: String,
    pub at: Millis,
}

/// Everything a processor knows about the current round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationHistory {
    pub room_id: RoomId,
    pub my_proxy: ProxyLabel,
    pub peers: Vec<ProxyLabel>,
    pub started_at: Millis,
    pub deadline: Millis,
    pub entries: Vec<HistoryEntry>,
}

impl ConversationHistory {
    pub fn new(room_id: RoomId, my_proxy: ProxyLabel, peers: Vec<ProxyLabel>, started_at: Millis, deadline: Millis) -> Self {
        Self {
            room_id,
            my_proxy,
            peers,
            started_at,
            deadline,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, from_proxy: ProxyLabel, text: impl Into<String>, at: Millis) {
        self.entries.push(HistoryEntry {
            from_proxy,
            text: text.into(),
            at,
        });
    }

    pub fn own_messages(&self) -> usize {
        self.entries.iter().filter(|e| e.from_proxy == self.my_proxy).count()
    }
}

pub const HISTORY_HEADER: &str = "Group chat so far (oldest first):";

/// Plain-text transcript for a language model: a header, one `<proxy>: <text>`
/// line per entry (at most `max_entries`, newest kept) and a closing line
/// naming the reader's own proxy.
pub fn render_history(history: &ConversationHistory, max_entries: usize) -> String {
    let skip = history.entries.len().saturating_sub(max_entries);
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for e in &history.entries[skip..] {
        let flat: String = e.text.split(['\n', '\r']).collect::<Vec<_>>().join(" ");
        out.push_str(&format!("{}: {}\n", e.from_proxy, flat));
    }
    out.push_str(&format!("You are {}.", history.my_proxy));
    out
}

/// Response latency: a fixed wait plus a uniform jitter, in whole milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayPolicy {
    pub wait_s: f64,
    pub add_random_up_to: f64,
}

impl Default for DelayPolicy {
    fn default() -> Self {
        Self {
            wait_s: 0.0,
            add_random_up_to: 0.0,
        }
    }
}

impl DelayPolicy {
    pub fn new(wait_s: f64, add_random_up_to: f64) -> Self {
        Self {
            wait_s: wait_s.max(0.0),
            add_random_up_to: add_random_up_to.max(0.0),
        }
    }

    pub fn sample(&self, rng: &mut SimRng) -> Millis {
        let extra = secs_to_millis(self.add_random_up_to);
        secs_to_millis(self.wait_s) + if extra == 0 { 0 } else { rng.gen_range(0..=extra) }
    }
}

/// When a processor wants to be asked for an utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pacing {
    /// After every incoming message (and once at round start), following the delay policy.
    Reactive,
    /// The n-th own message at the n-th offset after the round starts.
    Script(Vec<Millis>),
    /// Asked every interval; used for processors fed from outside.
    Poll(Millis),
}

/// The pluggable part of a participant: produces utterances and survey answers.
/// `generate` reads everything it needs from `history`.
pub trait Processor: Send {
    fn generate(&mut self, history: &ConversationHistory) -> Option<String>;

    /// `None` means no answer yet (or ever).
    fn verdict(&mut self, history: &ConversationHistory, options: &[ProxyLabel]) -> Option<Verdict>;

    fn pacing(&self) -> Pacing {
        Pacing::Reactive
    }

    fn name(&self) -> &str;
}

impl<P: Processor + ?Sized> Processor for Box<P> {
    fn generate(&mut self, history: &ConversationHistory) -> Option<String> {
        (**self).generate(history)
    }
    fn verdict(&mut self, history: &ConversationHistory, options: &[ProxyLabel]) -> Option<Verdict> {
        (**self).verdict(history, options)
    }
    fn pacing(&self) -> Pacing {
        (**self).pacing()
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

/// What a person typed into a bridged client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HumanInput {
    Say(String),
    Vote(Verdict),
}

/// Shared queue between a human-facing front end and a [`HumanBridge`].
#[derive(Debug, Clone, Default)]
pub struct HumanFeed(Arc<Mutex<VecDeque<HumanInput>>>);

impl HumanFeed {
    pub fn push(&self, input: HumanInput) {
        self.0.lock().expect("feed lock").push_back(input);
    }

    /// Parses a console line: `/vote A C` (or bare `/vote`) submits a verdict,
    /// anything else is said verbatim.
    pub fn push_line(&self, line: &str) {
        let trimmed = line.trim_end_matches(['\n', '\r']);
        if let Some(rest) = trimmed.strip_prefix("/vote") {
            let labels = rest.split_whitespace().filter_map(ProxyLabel::parse);
            self.push(HumanInput::Vote(Verdict::new(labels)));
        } else if !trimmed.is_empty() {
            self.push(HumanInput::Say(trimmed.to_owned()));
        }
    }

    fn take_say(&self) -> Option<String> {
        let mut q = self.0.lock().expect("feed lock");
        let i = q.iter().position(|x| matches!(x, HumanInput::Say(_)))?;
        match q.remove(i) {
            Some(HumanInput::Say(s)) => Some(s),
            _ => None,
        }
    }

    fn take_vote(&self) -> Option<Verdict> {
        let mut q = self.0.lock().expect("feed lock");
        let i = q.iter().position(|x| matches!(x, HumanInput::Vote(_)))?;
        match q.remove(i) {
            Some(HumanInput::Vote(v)) => Some(v),
            _ => None,
        }
    }
}

/// Placeholder processor for a person: only forwards what the feed provides.
#[derive(Debug, Clone)]
pub struct HumanBridge {
    feed: HumanFeed,
    poll: Millis,
}

impl HumanBridge {
    pub fn new(feed: HumanFeed) -> Self {
        Self { feed, poll: 200 }
    }

    pub fn feed(&self) -> &HumanFeed {
        &self.feed
    }
}

impl Processor for HumanBridge {
    fn generate(&mut self, _history: &ConversationHistory) -> Option<String> {
        self.feed.take_say()
    }

    fn verdict(&mut self, _history: &ConversationHistory, _options: &[ProxyLabel]) -> Option<Verdict> {
        self.feed.take_vote()
    }

    fn pacing(&self) -> Pacing {
        Pacing::Poll(self.poll)
    }

    fn name(&self) -> &str {
        "human-bridge"
    }
}
