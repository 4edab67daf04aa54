//! Time handling shared by the hotel, the participant runtime and the simulator.
//!
//! All components exchange time as milliseconds on a single timeline. Under the
//! real clock that timeline is wall time since the UNIX epoch; under the virtual
//! clock it starts at zero and only moves when the driver advances it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{SystemTime, UNIX_EPOCH};

/// Milliseconds on the shared timeline.
pub type Millis = u64;

/// Converts a (possibly fractional) number of seconds to milliseconds.
pub fn secs_to_millis(secs: f64) -> Millis {
    if secs <= 0.0 {
        0
    } else {
        (secs * 1000.0).round() as Millis
    }
}

/// Whole seconds for a timestamp, as used by join tokens.
pub fn millis_to_secs(ms: Millis) -> u64 {
    ms / 1000
}

/// Wall-clock milliseconds since the UNIX epoch.
pub fn wall_millis() -> Millis {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as Millis)
        .unwrap_or(0)
}

struct Scheduled<T> {
    at: Millis,
    order: u64,
    item: T,
}

impl<T> PartialEq for Scheduled<T> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.order == other.order
    }
}

impl<T> Eq for Scheduled<T> {}

impl<T> PartialOrd for Scheduled<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Scheduled<T> {
    // Reversed so the max-heap pops the earliest timer first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .at
            .cmp(&self.at)
            .then_with(|| other.order.cmp(&self.order))
    }
}

/// A discrete-event clock: time only moves when advanced, and registered
/// timers fire in timestamp order with ties broken by registration order.
pub struct VirtualClock<T> {
    now: Millis,
    registered: u64,
    timers: BinaryHeap<Scheduled<T>>,
}

impl<T> Default for VirtualClock<T> {
    fn default() -> Self {
        Self::new(0)
    }
}

impl<T> VirtualClock<T> {
    pub fn new(start: Millis) -> Self {
        Self {
            now: start,
            registered: 0,
            timers: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    /// Registers `item` to fire at `at`. Timers in the past fire on the next advance.
    pub fn schedule(&mut self, at: Millis, item: T) {
        let order = self.registered;
        self.registered += 1;
        self.timers.push(Scheduled { at, order, item });
    }

    pub fn next_at(&self) -> Option<Millis> {
        self.timers.peek().map(|s| s.at)
    }

    pub fn pending(&self) -> usize {
        self.timers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timers.is_empty()
    }

    /// Fires every timer due at or before `advance_to`, in order, and moves the
    /// clock there. `advance_to` earlier than `now` leaves the clock unchanged.
    pub fn advance_to(&mut self, advance_to: Millis) -> Vec<(Millis, T)> {
        let target = advance_to.max(self.now);
        let mut fired = Vec::new();
        while self.timers.peek().is_some_and(|s| s.at <= target) {
            let s = self.timers.pop().expect("peeked");
            fired.push((s.at, s.item));
        }
        self.now = target;
        fired
    }

    /// Pops the earliest timer and moves the clock to its deadline (never backwards).
    pub fn pop_next(&mut self) -> Option<(Millis, T)> {
        let s = self.timers.pop()?;
        self.now = self.now.max(s.at);
        Some((s.at, s.item))
    }
}
