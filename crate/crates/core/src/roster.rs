//! Operator-held ground truth: which agent ids are human and which model
//! backs each artificial agent. Nothing on the wire carries this.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Truth {
    Human,
    Ai {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<String>,
    },
}

impl Truth {
    pub fn ai(model: impl Into<String>) -> Self {
        Truth::Ai {
            model: Some(model.into()),
        }
    }

    pub fn is_human(&self) -> bool {
        matches!(self, Truth::Human)
    }

    pub fn model(&self) -> Option<&str> {
        match self {
            Truth::Ai { model } => model.as_deref(),
            Truth::Human => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthKind {
    Human,
    Ai,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub agent_id: String,
    pub truth: TruthKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RosterFile {
    #[serde(default, rename = "agent")]
    agents: Vec<RosterEntry>,
}

#[derive(Debug, Error)]
pub enum RosterError {
    #[error("reading roster: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing roster: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("agent {0:?} listed twice")]
    Duplicate(String),
    #[error("human agent {0:?} must not carry a model name")]
    HumanWithModel(String),
}

/// Map from agent id to ground-truth label.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Roster {
    labels: BTreeMap<String, Truth>,
}

impl Roster {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = RosterEntry>) -> Result<Self, RosterError> {
        let mut labels = BTreeMap::new();
        for e in entries {
            let truth = match e.truth {
                TruthKind::Human if e.model_name.is_some() => return Err(RosterError::HumanWithModel(e.agent_id)),
                TruthKind::Human => Truth::Human,
                TruthKind::Ai => Truth::Ai { model: e.model_name },
            };
            if labels.insert(e.agent_id.clone(), truth).is_some() {
                return Err(RosterError::Duplicate(e.agent_id));
            }
        }
        Ok(Self { labels })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RosterError> {
        let file: RosterFile = toml::from_str(text)?;
        Self::from_entries(file.agents)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RosterError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, agent_id: impl Into<String>, truth: Truth) {
        self.labels.insert(agent_id.into(), truth);
    }

    pub fn label(&self, agent_id: &str) -> Option<&Truth> {
        self.labels.get(agent_id)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Truth)> {
        self.labels.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_toml_string(&self) -> String {
        let agents = self
            .labels
            .iter()
            .map(|(id, t)| RosterEntry {
                agent_id: id.clone(),
                truth: if t.is_human() { TruthKind::Human } else { TruthKind::Ai },
                model_name: t.model().map(str::to_owned),
            })
            .collect();
        toml::to_string(&RosterFile { agents }).expect("roster serializes")
    }
}
