//! Room formation and proxy identities.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::clock::Millis;
use crate::protocol::{ProxyLabel, RoomId, Verdict};
use crate::store::TranscriptEntry;

/// Takes rooms of `room_size` from the front of the queue, first come first
/// served, and shuffles the seat order inside each window. Leftover guests
/// stay queued in arrival order.
pub fn form_rooms<R: Rng + ?Sized>(queue: &mut VecDeque<String>, room_size: usize, rng: &mut R) -> Vec<Vec<String>> {
    let mut rooms = Vec::new();
    if room_size == 0 {
        return rooms;
    }
    while queue.len() >= room_size {
        let mut window: Vec<String> = queue.drain(..room_size).collect();
        window.shuffle(rng);
        rooms.push(window);
    }
    rooms
}

/// Uniformly random bijection from members to the first `members.len()` labels.
pub fn assign_proxies<R: Rng + ?Sized>(members: &[String], rng: &mut R) -> BTreeMap<String, ProxyLabel> {
    let mut labels = ProxyLabel::first(members.len());
    assert_eq!(labels.len(), members.len(), "room larger than the label alphabet");
    labels.shuffle(rng);
    members.iter().cloned().zip(labels).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoomPhase {
    /// Members and proxies assigned, conversation not yet announced.
    Formed,
    Chatting,
    /// Deadline passed; chat is closed and surveys are about to go out.
    Closed,
    Surveying { until: Millis },
}

#[derive(Debug, Clone)]
pub struct Room {
    pub room_id: RoomId,
    pub members: Vec<String>,
    pub proxy_of: BTreeMap<String, ProxyLabel>,
    pub started_at: Millis,
    pub deadline: Millis,
    pub transcript: Vec<TranscriptEntry>,
    pub surveys: BTreeMap<String, Verdict>,
    /// Members prompted for a survey who have neither answered nor left.
    pub awaiting: BTreeSet<String>,
    pub phase: RoomPhase,
}

impl Room {
    pub fn new(
        room_id: RoomId,
        members: Vec<String>,
        proxy_of: BTreeMap<String, ProxyLabel>,
        started_at: Millis,
        duration: Millis,
    ) -> Self {
        Self {
            room_id,
            members,
            proxy_of,
            started_at,
            deadline: started_at + duration,
            transcript: Vec::new(),
            surveys: BTreeMap::new(),
            awaiting: BTreeSet::new(),
            phase: RoomPhase::Formed,
        }
    }

    pub fn is_member(&self, agent_id: &str) -> bool {
        self.members.iter().any(|m| m == agent_id)
    }

    /// Every label in the room except `agent_id`'s own.
    pub fn options_for(&self, agent_id: &str) -> Vec<ProxyLabel> {
        let own = self.proxy_of.get(agent_id).copied();
        let mut opts: Vec<_> = self.proxy_of.values().copied().filter(|l| Some(*l) != own).collect();
        opts.sort();
        opts
    }

    pub fn identities(&self) -> BTreeMap<ProxyLabel, String> {
        self.proxy_of.iter().map(|(m, l)| (*l, m.clone())).collect()
    }
}
