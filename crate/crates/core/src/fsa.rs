//! Finite-state behaviors with boolean-action transition semantics.
//!
//! A behavior is a JSON document listing states and action-labelled edges.
//! Running an action yields `true` (success, take the edge) or `false`
//! (failure, stay put). Non-triggered edges are attempted by the run loop;
//! triggered edges only fire in response to an incoming interaction.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Millis;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub action: String,
    #[serde(default)]
    pub triggered: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BehaviorDoc {
    role: String,
    states: Vec<String>,
    initial: String,
    edges: Vec<Edge>,
}

/// A validated role behavior. States keep their declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Behavior {
    pub role_name: String,
    pub states: Vec<String>,
    pub initial: String,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FsaError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("state {0:?} is unreachable from the initial state")]
    UnreachableState(String),
    #[error("action {0:?} is not registered")]
    UnknownAction(String),
    #[error("state {0:?} is not part of the behavior")]
    UnknownState(String),
    #[error("action {action:?} failed abnormally: {message}")]
    ActionPanic { action: String, message: String },
}

/// Loads and validates a behavior document.
pub fn load_behavior(document: &str) -> Result<Behavior, FsaError> {
    let doc: BehaviorDoc = serde_json::from_str(document).map_err(|e| FsaError::Schema(e.to_string()))?;
    if doc.role.trim().is_empty() {
        return Err(FsaError::Schema("role must not be empty".into()));
    }
    let mut seen = BTreeSet::new();
    for s in &doc.states {
        if !seen.insert(s.as_str()) {
            return Err(FsaError::Schema(format!("duplicate state {s:?}")));
        }
    }
    if !seen.contains(doc.initial.as_str()) {
        return Err(FsaError::Schema(format!("initial state {:?} not among states", doc.initial)));
    }
    for e in &doc.edges {
        for end in [&e.from, &e.to] {
            if !seen.contains(end.as_str()) {
                return Err(FsaError::Schema(format!(
                    "edge {:?} references unknown state {end:?}",
                    e.action
                )));
            }
        }
        if e.action.trim().is_empty() {
            return Err(FsaError::Schema(format!("edge {} -> {} has no action", e.from, e.to)));
        }
    }
    let behavior = Behavior {
        role_name: doc.role,
        states: doc.states,
        initial: doc.initial,
        edges: doc.edges,
    };
    let reachable = behavior.reachable();
    if let Some(s) = behavior.states.iter().find(|s| !reachable.contains(s.as_str())) {
        return Err(FsaError::UnreachableState(s.clone()));
    }
    Ok(behavior)
}

pub fn load_behavior_file(path: impl AsRef<Path>) -> Result<Behavior, FsaError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| FsaError::Schema(format!("{}: {e}", path.as_ref().display())))?;
    load_behavior(&text)
}

impl Behavior {
    fn reachable(&self) -> BTreeSet<&str> {
        let mut seen = BTreeSet::from([self.initial.as_str()]);
        let mut frontier = VecDeque::from([self.initial.as_str()]);
        while let Some(s) = frontier.pop_front() {
            for e in self.edges.iter().filter(|e| e.from == s) {
                if seen.insert(e.to.as_str()) {
                    frontier.push_back(e.to.as_str());
                }
            }
        }
        seen
    }

    pub fn has_state(&self, state: &str) -> bool {
        self.states.iter().any(|s| s == state)
    }

    /// Distinct action names, sorted.
    pub fn action_names(&self) -> BTreeSet<&str> {
        self.edges.iter().map(|e| e.action.as_str()).collect()
    }

    fn outgoing<'a>(&'a self, state: &'a str, triggered: bool) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges
            .iter()
            .filter(move |e| e.from == state && e.triggered == triggered)
    }

    /// Text listing of every state and its outgoing edges, in declaration order.
    pub fn adjacency_listing(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "role {} ({} states, {} edges, initial {})",
            self.role_name,
            self.states.len(),
            self.edges.len(),
            self.initial
        );
        for s in &self.states {
            let _ = writeln!(out, "{s}");
            for e in self.edges.iter().filter(|e| &e.from == s) {
                let mark = if e.triggered { "  [triggered]" } else { "" };
                let _ = writeln!(out, "  --{}--> {}{mark}", e.action, e.to);
            }
        }
        out
    }
}

pub type ActionResult = Result<bool, String>;

type ActionFn<C, I> = Box<dyn Fn(&mut C, Option<&I>) -> ActionResult + Send + Sync>;

/// Maps action names to callables over a context `C`. Triggered actions also
/// receive the interaction `I` that triggered them.
pub struct ActionRegistry<C, I> {
    actions: BTreeMap<String, ActionFn<C, I>>,
}

impl<C, I> Default for ActionRegistry<C, I> {
    fn default() -> Self {
        Self {
            actions: BTreeMap::new(),
        }
    }
}

impl<C, I> ActionRegistry<C, I> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, name: &str, action: F) -> &mut Self
    where
        F: Fn(&mut C, Option<&I>) -> ActionResult + Send + Sync + 'static,
    {
        self.actions.insert(name.to_owned(), Box::new(action));
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.actions.contains_key(name)
    }

    /// Checks that every action the behavior references is registered.
    pub fn bind(&self, behavior: &Behavior) -> Result<(), FsaError> {
        match behavior.action_names().into_iter().find(|a| !self.contains(a)) {
            Some(missing) => Err(FsaError::UnknownAction(missing.to_owned())),
            None => Ok(()),
        }
    }

    fn run(&self, name: &str, ctx: &mut C, interaction: Option<&I>) -> Result<bool, FsaError> {
        let action = self
            .actions
            .get(name)
            .ok_or_else(|| FsaError::UnknownAction(name.to_owned()))?;
        match catch_unwind(AssertUnwindSafe(|| action(ctx, interaction))) {
            Ok(Ok(ok)) => Ok(ok),
            Ok(Err(message)) => Err(FsaError::ActionPanic {
                action: name.to_owned(),
                message,
            }),
            Err(panic) => {
                let message = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "panic".into());
                Err(FsaError::ActionPanic {
                    action: name.to_owned(),
                    message,
                })
            }
        }
    }
}

/// Chooses the order in which eligible edges are attempted.
pub trait EdgePolicy {
    fn order<'a>(&self, candidates: Vec<&'a Edge>) -> Vec<&'a Edge>;
}

/// Attempts edges in the order they are declared in the document.
#[derive(Debug, Default, Clone, Copy)]
pub struct DeclarationOrder;

impl EdgePolicy for DeclarationOrder {
    fn order<'a>(&self, candidates: Vec<&'a Edge>) -> Vec<&'a Edge> {
        candidates
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub state: String,
    /// The edge taken, if any action succeeded.
    pub fired: Option<Edge>,
}

/// Attempts the non-triggered edges leaving `state`; the first action that
/// succeeds moves the machine along its edge.
pub fn step<C, I>(
    behavior: &Behavior,
    state: &str,
    registry: &ActionRegistry<C, I>,
    ctx: &mut C,
) -> Result<StepOutcome, FsaError> {
    step_with_policy(behavior, state, registry, ctx, &DeclarationOrder)
}

pub fn step_with_policy<C, I>(
    behavior: &Behavior,
    state: &str,
    registry: &ActionRegistry<C, I>,
    ctx: &mut C,
    policy: &dyn EdgePolicy,
) -> Result<StepOutcome, FsaError> {
    if !behavior.has_state(state) {
        return Err(FsaError::UnknownState(state.to_owned()));
    }
    for edge in policy.order(behavior.outgoing(state, false).collect()) {
        if registry.run(&edge.action, ctx, None)? {
            return Ok(StepOutcome {
                state: edge.to.clone(),
                fired: Some(edge.clone()),
            });
        }
    }
    Ok(StepOutcome {
        state: state.to_owned(),
        fired: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventOutcome {
    pub state: String,
    pub handled: bool,
    pub fired: Option<Edge>,
}

/// Offers `interaction` to the triggered edges leaving `state`, in declaration
/// order; the first action that accepts it and succeeds takes its edge.
pub fn handle_event<C, I>(
    behavior: &Behavior,
    state: &str,
    registry: &ActionRegistry<C, I>,
    ctx: &mut C,
    interaction: &I,
) -> Result<EventOutcome, FsaError> {
    if !behavior.has_state(state) {
        return Err(FsaError::UnknownState(state.to_owned()));
    }
    for edge in behavior.outgoing(state, true) {
        if registry.run(&edge.action, ctx, Some(interaction))? {
            return Ok(EventOutcome {
                state: edge.to.clone(),
                handled: true,
                fired: Some(edge.clone()),
            });
        }
    }
    Ok(EventOutcome {
        state: state.to_owned(),
        handled: false,
        fired: None,
    })
}

/// One transition in an execution trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub from: String,
    pub action: String,
    pub to: String,
}

/// Current state of one behavior instance plus its transition trace.
#[derive(Debug, Clone)]
pub struct Runner {
    pub behavior: Behavior,
    pub state: String,
    pub trace: Vec<Transition>,
}

impl Runner {
    pub fn new(behavior: Behavior) -> Self {
        let state = behavior.initial.clone();
        Self {
            behavior,
            state,
            trace: Vec::new(),
        }
    }

    fn record(&mut self, fired: Option<Edge>, to: String) -> bool {
        match fired {
            Some(edge) => {
                self.trace.push(Transition {
                    from: std::mem::replace(&mut self.state, to.clone()),
                    action: edge.action,
                    to,
                });
                true
            }
            None => false,
        }
    }

    /// One [`step`]; returns whether a transition happened.
    pub fn step<C, I>(&mut self, registry: &ActionRegistry<C, I>, ctx: &mut C) -> Result<bool, FsaError> {
        let out = step(&self.behavior, &self.state, registry, ctx)?;
        Ok(self.record(out.fired, out.state))
    }

    /// One [`handle_event`]; returns whether the interaction was handled.
    pub fn handle<C, I>(
        &mut self,
        registry: &ActionRegistry<C, I>,
        ctx: &mut C,
        interaction: &I,
    ) -> Result<bool, FsaError> {
        let out = handle_event(&self.behavior, &self.state, registry, ctx, interaction)?;
        Ok(self.record(out.fired, out.state))
    }

    /// Steps until no action succeeds or `max_steps` transitions were taken.
    pub fn settle<C, I>(
        &mut self,
        registry: &ActionRegistry<C, I>,
        ctx: &mut C,
        max_steps: usize,
    ) -> Result<usize, FsaError> {
        let mut n = 0;
        while n < max_steps && self.step(registry, ctx)? {
            n += 1;
        }
        Ok(n)
    }

    pub fn visited_states(&self) -> Vec<String> {
        std::iter::once(self.behavior.initial.clone())
            .chain(self.trace.iter().map(|t| t.to.clone()))
            .collect()
    }
}

/// Per-agent context handed to actions: identity, current state, pending
/// interactions, messages to send, the current time and a private scratch store.
#[derive(Debug, Clone)]
pub struct ActionContext<I> {
    pub agent_id: String,
    pub current_state: String,
    pub now: Millis,
    pub inbox: VecDeque<I>,
    pub outbox: Vec<I>,
    pub scratch: BTreeMap<String, serde_json::Value>,
}

impl<I> ActionContext<I> {
    pub fn new(agent_id: impl Into<String>, initial_state: impl Into<String>) -> Self {
        Self {
            agent_id: agent_id.into(),
            current_state: initial_state.into(),
            now: 0,
            inbox: VecDeque::new(),
            outbox: Vec::new(),
            scratch: BTreeMap::new(),
        }
    }
}

/// The room manager behavior shipped with the hotel.
pub const MANAGER_BEHAVIOR: &str = include_str!("../behaviors/manager.fsa");
/// The participant behavior every non-manager agent receives on joining.
pub const PARTICIPANT_BEHAVIOR: &str = include_str!("../behaviors/participant.fsa");

pub fn manager_behavior() -> Behavior {
    load_behavior(MANAGER_BEHAVIOR).expect("shipped manager behavior is valid")
}

pub fn participant_behavior() -> Behavior {
    load_behavior(PARTICIPANT_BEHAVIOR).expect("shipped participant behavior is valid")
}
