use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{ScriptLine, VerdictStrategy};
use crate::hotel::{HotelConfig, MANAGER_ID};
use crate::protocol::{ProfileForm, ProfileSubmission};
use crate::roster::{Roster, Truth, TruthKind};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessorKind {
    #[default]
    Scripted,
    /// A chat-completions client; `endpoint` and `model` are required.
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: String,
    #[serde(default)]
    pub display_name: Option<String>,
    pub truth: TruthKind,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub processor: ProcessorKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub system_prompt: Option<String>,
    #[serde(default = "default_background")]
    pub background: String,
    #[serde(default = "default_experience")]
    pub ai_experience: i64,
    #[serde(default)]
    pub join_at_s: f64,
    #[serde(default)]
    pub utterances: Vec<ScriptLine>,
    #[serde(default)]
    pub verdict: VerdictStrategy,
    #[serde(default)]
    pub typo_rate: f64,
    #[serde(default)]
    pub wait_s: f64,
    #[serde(default)]
    pub add_random_up_to: f64,
}

fn default_background() -> String {
    "other:unspecified".into()
}

fn default_experience() -> i64 {
    3
}

impl AgentSpec {
    pub fn new(id: impl Into<String>, truth: TruthKind) -> Self {
        Self {
            id: id.into(),
            display_name: None,
            truth,
            model: None,
            processor: ProcessorKind::Scripted,
            endpoint: None,
            system_prompt: None,
            background: default_background(),
            ai_experience: default_experience(),
            join_at_s: 0.0,
            utterances: Vec::new(),
            verdict: VerdictStrategy::None,
            typo_rate: 0.0,
            wait_s: 0.0,
            add_random_up_to: 0.0,
        }
    }

    pub fn display_name(&self) -> &str {
        self.display_name.as_deref().unwrap_or(&self.id)
    }

    pub fn profile(&self) -> ProfileSubmission {
        ProfileSubmission {
            background: self.background.clone(),
            ai_experience: self.ai_experience,
        }
    }

    pub fn truth(&self) -> Truth {
        match self.truth {
            TruthKind::Human => Truth::Human,
            TruthKind::Ai => Truth::Ai {
                model: self.model.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Drops the agent's connection.
    Disconnect,
    /// Opens a fresh connection and rejoins with the token held.
    Reconnect,
    /// Resends the agent's last frame verbatim.
    Replay,
    /// Sends a chat line whose token signature has been altered.
    TamperToken,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    pub kind: FaultKind,
    pub agent: String,
    pub at_s: f64,
}

/// Checked after the run. Unset fields are not checked, except the two
/// delivery counters which default to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Expectations {
    pub rounds_closed: Option<usize>,
    pub rooms_formed: Option<usize>,
    pub max_concurrent_rooms: Option<usize>,
    pub verdicts_recorded: Option<usize>,
    pub verdicts_absent: Option<usize>,
    pub recycled: Option<usize>,
    pub auth_failures: Option<u64>,
    pub dropped_replays: Option<u64>,
    pub liveness_disconnects: Option<u64>,
    pub llm_errors_min: Option<u64>,
    pub cross_room_deliveries: Option<usize>,
    pub identity_leaks: Option<usize>,
}

impl Default for Expectations {
    fn default() -> Self {
        Self {
            rounds_closed: None,
            rooms_formed: None,
            max_concurrent_rooms: None,
            verdicts_recorded: None,
            verdicts_absent: None,
            recycled: None,
            auth_failures: None,
            dropped_replays: None,
            liveness_disconnects: None,
            llm_errors_min: None,
            cross_room_deliveries: Some(0),
            identity_leaks: Some(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Every agent leaves after this many rounds.
    #[serde(default = "default_rounds")]
    pub rounds_per_agent: u32,
    #[serde(default = "default_max_time")]
    pub max_virtual_time_s: f64,
    #[serde(default)]
    pub hotel: HotelConfig,
    #[serde(default, rename = "agent")]
    pub agents: Vec<AgentSpec>,
    #[serde(default, rename = "fault")]
    pub faults: Vec<Fault>,
    #[serde(default)]
    pub expect: Expectations,
}

fn default_rounds() -> u32 {
    1
}

fn default_max_time() -> f64 {
    4.0 * 3600.0
}

impl Scenario {
    pub fn new(name: impl Into<String>, seed: u64, agents: Vec<AgentSpec>) -> Self {
        Self {
            name: name.into(),
            seed,
            rounds_per_agent: default_rounds(),
            max_virtual_time_s: default_max_time(),
            hotel: HotelConfig::default(),
            agents,
            faults: Vec::new(),
            expect: Expectations::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        self.hotel.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        if self.rounds_per_agent == 0 {
            return bad("rounds_per_agent must be at least 1".into());
        }
        if !(self.max_virtual_time_s.is_finite() && self.max_virtual_time_s > 0.0) {
            return bad("max_virtual_time_s must be positive".into());
        }
        let round = self.hotel.round_duration_s;
        let mut ids = BTreeSet::new();
        for a in &self.agents {
            if a.id.trim().is_empty() || a.id == MANAGER_ID {
                return bad(format!("agent id {:?} is not allowed", a.id));
            }
            if !ids.insert(a.id.as_str()) {
                return bad(format!("agent {:?} listed twice", a.id));
            }
            if a.truth == TruthKind::Human && a.model.is_some() {
                return bad(format!("human agent {:?} must not name a model", a.id));
            }
            ProfileForm::validate(&a.profile()).map_err(|e| ScenarioError::Invalid(format!("agent {}: {e}", a.id)))?;
            if !(a.join_at_s.is_finite() && a.join_at_s >= 0.0) {
                return bad(format!("agent {}: join_at_s must be >= 0", a.id));
            }
            if let Some(line) = a.utterances.iter().find(|l| !(l.at_s >= 0.0 && l.at_s < round)) {
                return bad(format!(
                    "agent {}: utterance at {} s falls outside the {round} s round",
                    a.id, line.at_s
                ));
            }
            if !(0.0..=1.0).contains(&a.typo_rate) {
                return bad(format!("agent {}: typo_rate must lie in [0, 1]", a.id));
            }
            if a.wait_s < 0.0 || a.add_random_up_to < 0.0 {
                return bad(format!("agent {}: delays must be >= 0", a.id));
            }
            if a.processor == ProcessorKind::Llm && (a.endpoint.is_none() || a.model.is_none()) {
                return bad(format!("agent {}: an llm processor needs endpoint and model", a.id));
            }
        }
        for f in &self.faults {
            if !ids.contains(f.agent.as_str()) {
                return bad(format!("fault targets unknown agent {:?}", f.agent));
            }
            if !(f.at_s.is_finite() && f.at_s >= 0.0) {
                return bad(format!("fault at {} s: time must be >= 0", f.at_s));
            }
        }
        Ok(())
    }

    pub fn roster(&self) -> Roster {
        let mut r = Roster::new();
        for a in &self.agents {
            r.insert(a.id.clone(), a.truth());
        }
        r
    }

    /// The same scenario with every duration multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut s = self.clone();
        s.hotel = self.hotel.scaled(factor);
        s.max_virtual_time_s *= factor;
        for a in &mut s.agents {
            a.join_at_s *= factor;
            a.wait_s *= factor;
            a.add_random_up_to *= factor;
            for l in &mut a.utterances {
                l.at_s *= factor;
            }
        }
        for f in &mut s.faults {
            f.at_s *= factor;
        }
        s
    }
}
