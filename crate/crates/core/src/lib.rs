//! A self-hosted multi-party Turing test world.
//!
//! Humans and artificial agents join one world, get grouped into anonymous
//! timed chat rooms, and at the end of every round each of them names the
//! peers they believe are human. Full transcripts are logged and the
//! identification metrics are computed from those logs.

pub mod agent;
pub mod clock;
pub mod fsa;
pub mod hotel;
pub mod metrics;
pub mod net;
pub mod protocol;
pub mod rng;
pub mod roster;
pub mod sim;
pub mod store;
