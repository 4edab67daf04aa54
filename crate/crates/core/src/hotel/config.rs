use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{secs_to_millis, Millis};
use crate::protocol::{ProxyLabel, DEFAULT_TOKEN_TTL_S};

pub const DEFAULT_OVERVIEW: &str = "Welcome to the hotel. You will be placed in a small group chat \
with other guests for a few minutes. Everyone is shown only as a letter. When the chat ends, \
tell us which of the other guests you think were human. First, please fill in the short form.";

/// Room manager settings. Durations are in seconds and may be fractional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HotelConfig {
    pub world: String,
    pub room_size: usize,
    pub round_duration_s: f64,
    pub survey_timeout_s: f64,
    pub liveness_grace_s: f64,
    /// Periodic liveness checks of the hall; 0 disables them (a check still
    /// runs after every round).
    pub liveness_interval_s: f64,
    pub token_ttl_s: u64,
    pub max_message_chars: usize,
    pub overview: String,
}

impl Default for HotelConfig {
    fn default() -> Self {
        Self {
            world: "turing-hotel".into(),
            room_size: 4,
            round_duration_s: 180.0,
            survey_timeout_s: 120.0,
            liveness_grace_s: 10.0,
            liveness_interval_s: 0.0,
            token_ttl_s: DEFAULT_TOKEN_TTL_S,
            max_message_chars: 2000,
            overview: DEFAULT_OVERVIEW.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl HotelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(2..=ProxyLabel::MAX_ROOM_SIZE).contains(&self.room_size) {
            return Err(ConfigError::Invalid(format!(
                "room_size must be within 2..={}",
                ProxyLabel::MAX_ROOM_SIZE
            )));
        }
        for (name, v) in [
            ("round_duration_s", self.round_duration_s),
            ("survey_timeout_s", self.survey_timeout_s),
            ("liveness_grace_s", self.liveness_grace_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if !(self.liveness_interval_s.is_finite() && self.liveness_interval_s >= 0.0) {
            return Err(ConfigError::Invalid("liveness_interval_s must be >= 0".into()));
        }
        if self.token_ttl_s == 0 || self.max_message_chars == 0 {
            return Err(ConfigError::Invalid("token_ttl_s and max_message_chars must be positive".into()));
        }
        Ok(())
    }

    pub fn round_duration(&self) -> Millis {
        secs_to_millis(self.round_duration_s)
    }

    pub fn survey_timeout(&self) -> Millis {
        secs_to_millis(self.survey_timeout_s)
    }

    pub fn liveness_grace(&self) -> Millis {
        secs_to_millis(self.liveness_grace_s)
    }

    pub fn liveness_interval(&self) -> Option<Millis> {
        (self.liveness_interval_s > 0.0).then(|| secs_to_millis(self.liveness_interval_s))
    }

    /// Scales every duration by `factor`, for accelerated real-clock runs.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            round_duration_s: self.round_duration_s * factor,
            survey_timeout_s: self.survey_timeout_s * factor,
            liveness_grace_s: self.liveness_grace_s * factor,
            liveness_interval_s: self.liveness_interval_s * factor,
            ..self.clone()
        }
    }
}
