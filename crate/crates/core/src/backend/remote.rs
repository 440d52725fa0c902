use std::time::Duration;

use serde_json::{json, Value};

use super::{check_length, Backend, BackendError, Capability, TokenBucket};
use crate::prompt::RenderedPrompt;

pub const ENV_URL: &str = "FAIRICL_API_URL";
pub const ENV_KEY: &str = "FAIRICL_API_KEY";
pub const ENV_MODEL: &str = "FAIRICL_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Full chat-completions endpoint URL.
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub max_prompt_chars: usize,
    /// Send the task description as a system message.
    pub system_split: bool,
    pub attempts: u32,
    pub backoff: Duration,
    pub timeout: Duration,
    pub requests_per_minute: Option<u32>,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            url: url.into(),
            model: model.into(),
            api_key: None,
            max_prompt_chars: 100_000,
            system_split: false,
            attempts: 3,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
            requests_per_minute: None,
        }
    }

    /// Endpoint, model and key from the environment. The key is optional so
    /// local servers without auth work.
    pub fn from_env() -> Result<Self, BackendError> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        let url = var(ENV_URL).ok_or_else(|| BackendError::Config(format!("{ENV_URL} is not set")))?;
        let model = var(ENV_MODEL).ok_or_else(|| BackendError::Config(format!("{ENV_MODEL} is not set")))?;
        let mut cfg = RemoteConfig::new(url, model);
        cfg.api_key = var(ENV_KEY);
        Ok(cfg)
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    limiter: Option<TokenBucket>,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = config.requests_per_minute.map(TokenBucket::per_minute);
        RemoteBackend { config, agent, limiter }
    }

    pub fn request_body(&self, prompt: &RenderedPrompt) -> Value {
        let messages = if self.config.system_split && !prompt.description.is_empty() {
            let rest = prompt.text[prompt.description.end..].trim_start();
            json!([
                {"role": "system", "content": prompt.part(&prompt.description)},
                {"role": "user", "content": rest},
            ])
        } else {
            json!([{"role": "user", "content": prompt.text}])
        };
        json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": messages,
        })
    }

    fn call_once(&self, body: &Value) -> Result<String, BackendError> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        let mut req = self.agent.post(&self.config.url);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Http {
                status,
                body: text.chars().take(500).collect(),
            });
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| BackendError::BadResponse(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::BadResponse("no choices[0].message.content".into()))
    }
}

impl Backend for RemoteBackend {
    fn describe(&self) -> Capability {
        Capability {
            model: self.config.model.clone(),
            max_prompt_chars: self.config.max_prompt_chars,
        }
    }

    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, BackendError> {
        check_length(&self.describe(), prompt)?;
        let body = self.request_body(prompt);
        let attempts = self.config.attempts.max(1);
        let mut delay = self.config.backoff;
        let mut attempt = 1;
        loop {
            match self.call_once(&body) {
                Err(e) if e.is_transient() && attempt < attempts => {
                    log::warn!("attempt {attempt}/{attempts} failed: {e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
