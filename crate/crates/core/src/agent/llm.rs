use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tracing::warn;

use super::processor::{render_history, ConversationHistory, Processor};
use super::verdict::verdict_from_reply;
use crate::protocol::{ProxyLabel, Verdict};

/// The survey question asked of language models; `{options}` is replaced by
/// the comma-separated peer labels.
pub const DEFAULT_SURVEY_TEMPLATE: &str = include_str!("../../../../data/prompts/survey.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    /// Base URL; requests go to `<endpoint_url>/v1/chat/completions`.
    pub endpoint_url: String,
    pub model_name: String,
    pub system_prompt: String,
    pub timeout_s: f64,
    pub max_history: usize,
    pub survey_template: String,
    pub api_key: Option<String>,
}

impl LlmConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>, system_prompt: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            system_prompt: system_prompt.into(),
            timeout_s: 30.0,
            max_history: 200,
            survey_template: DEFAULT_SURVEY_TEMPLATE.into(),
            api_key: None,
        }
    }

    pub fn with_system_prompt_file(mut self, path: impl AsRef<Path>) -> std::io::Result<Self> {
        self.system_prompt = std::fs::read_to_string(path)?.trim_end().to_owned();
        Ok(self)
    }

    pub fn completions_url(&self) -> String {
        format!("{}/v1/chat/completions", self.endpoint_url.trim_end_matches('/'))
    }

    pub fn survey_question(&self, options: &[ProxyLabel]) -> String {
        let list = options.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(", ");
        self.survey_template.trim_end().replace("{options}", &list)
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("endpoint returned no completion")]
    NoCompletion,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

/// A chat-completions backed processor. Failures turn into silence.
pub struct LlmProcessor {
    config: LlmConfig,
    http: ureq::Agent,
    errors: u64,
}

impl LlmProcessor {
    pub fn new(config: LlmConfig) -> Self {
        let http = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s.max(0.001))))
            .build()
            .into();
        Self {
            config,
            http,
            errors: 0,
        }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    /// Requests that failed so far.
    pub fn error_count(&self) -> u64 {
        self.errors
    }

    /// One chat-completion request with a system message and a user message.
    pub fn complete(&self, user: &str) -> Result<String, LlmError> {
        let body = json!({
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": self.config.system_prompt},
                {"role": "user", "content": user},
            ],
        });
        let mut req = self.http.post(self.config.completions_url());
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| LlmError::Endpoint(e.to_string()))?;
        let parsed: Completion = resp
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Endpoint(e.to_string()))?;
        let first = parsed.choices.into_iter().next().ok_or(LlmError::NoCompletion)?;
        Ok(first.message.content.unwrap_or_default().trim().to_owned())
    }

    fn complete_or_log(&mut self, user: &str) -> Option<String> {
        match self.complete(user) {
            Ok(text) => Some(text),
            Err(e) => {
                self.errors += 1;
                warn!(model = %self.config.model_name, "completion failed, staying silent: {e}");
                None
            }
        }
    }
}

impl Processor for LlmProcessor {
    fn generate(&mut self, history: &ConversationHistory) -> Option<String> {
        let prompt = render_history(history, self.config.max_history);
        self.complete_or_log(&prompt).filter(|t| !t.is_empty())
    }

    fn verdict(&mut self, history: &ConversationHistory, options: &[ProxyLabel]) -> Option<Verdict> {
        let prompt = format!(
            "{}\n\n{}",
            render_history(history, self.config.max_history),
            self.config.survey_question(options)
        );
        let reply = self.complete_or_log(&prompt).unwrap_or_default();
        Some(verdict_from_reply(&reply, options))
    }

    fn name(&self) -> &str {
        &self.config.model_name
    }
}
