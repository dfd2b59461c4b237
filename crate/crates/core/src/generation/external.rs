//! Chat-completion client for an external LLM endpoint.
//!
//! Request: `POST <endpoint>` with
//! `{"model": ..., "messages": [{"role": "user", "content": <prompt>}]}` and
//! `Authorization: Bearer <key>`. Response: the first
//! `choices[0].message.content`.
//!
//! HTTP 429 and 5xx are retried with exponential backoff (honoring a numeric
//! `Retry-After`, capped at `max_backoff`) up to `max_retries` times; 401/403
//! fail immediately.

use std::io::ErrorKind;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{
    assemble_prompt, FinishReason, GenerationCondition, GenerationError, GenerationRecord,
    Generator, DEFAULT_TEMPLATE,
};

pub const ENV_ENDPOINT: &str = "GRAG_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "GRAG_LLM_MODEL";
pub const ENV_API_KEY: &str = "GRAG_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl ExternalConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        ExternalConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(8),
        }
    }

    pub fn from_env() -> Result<Self, GenerationError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Reads the three `GRAG_LLM_*` variables through `lookup`.
    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, GenerationError> {
        let get = |name: &str| {
            lookup(name)
                .filter(|v| !v.trim().is_empty())
                .ok_or_else(|| GenerationError::Config(format!("environment variable {name} is not set")))
        };
        Ok(Self::new(get(ENV_ENDPOINT)?, get(ENV_MODEL)?, get(ENV_API_KEY)?))
    }

    fn backoff(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

#[derive(Debug, Clone)]
pub struct ExternalClient {
    config: ExternalConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Done(String),
    Retry { status: u16, wait: Option<Duration> },
}

impl ExternalClient {
    pub fn new(config: ExternalConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        ExternalClient { config, agent }
    }

    pub fn config(&self) -> &ExternalConfig {
        &self.config
    }

    /// Sends `prompt` and returns the first completion text.
    pub fn generate(&self, prompt: &str) -> Result<String, GenerationError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut retries = 0;
        loop {
            match self.attempt(&body)? {
                Attempt::Done(text) => return Ok(text),
                Attempt::Retry { status, wait } => {
                    if retries >= self.config.max_retries {
                        return Err(GenerationError::RateLimited {
                            attempts: retries + 1,
                            last_status: status,
                        });
                    }
                    let delay = wait
                        .unwrap_or_else(|| self.config.backoff(retries))
                        .min(self.config.max_backoff);
                    log::debug!("HTTP {status}, retrying in {delay:?}");
                    thread::sleep(delay);
                    retries += 1;
                }
            }
        }
    }

    fn attempt(&self, body: &Value) -> Result<Attempt, GenerationError> {
        let response = self
            .agent
            .post(&self.config.endpoint)
            .set("Authorization", &format!("Bearer {}", self.config.api_key))
            .send_json(body.clone());
        match response {
            Ok(resp) => {
                let value: Value = resp
                    .into_json()
                    .map_err(|e| GenerationError::MalformedResponse(e.to_string()))?;
                value
                    .pointer("/choices/0/message/content")
                    .and_then(Value::as_str)
                    .map(|s| Attempt::Done(s.to_string()))
                    .ok_or_else(|| {
                        GenerationError::MalformedResponse("missing choices[0].message.content".into())
                    })
            }
            Err(ureq::Error::Status(status, resp)) => match status {
                401 | 403 => Err(GenerationError::Auth { status }),
                429 | 500..=599 => {
                    let wait = resp
                        .header("Retry-After")
                        .and_then(|v| v.trim().parse::<u64>().ok())
                        .map(Duration::from_secs);
                    Ok(Attempt::Retry { status, wait })
                }
                _ => Err(GenerationError::Http {
                    status,
                    body: resp.into_string().unwrap_or_default(),
                }),
            },
            Err(ureq::Error::Transport(t)) => {
                if is_timeout(&t) {
                    Err(GenerationError::Timeout)
                } else {
                    Err(GenerationError::Connection(t.to_string()))
                }
            }
        }
    }
}

fn is_timeout(t: &ureq::Transport) -> bool {
    let mut source = std::error::Error::source(t);
    while let Some(err) = source {
        if let Some(io) = err.downcast_ref::<std::io::Error>() {
            if matches!(io.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock) {
                return true;
            }
        }
        source = err.source();
    }
    t.to_string().contains("timed out")
}

/// [`Generator`] backed by [`ExternalClient`].
#[derive(Debug, Clone)]
pub struct ExternalGenerator {
    client: ExternalClient,
    template: String,
}

impl ExternalGenerator {
    pub fn new(client: ExternalClient) -> Self {
        ExternalGenerator {
            client,
            template: DEFAULT_TEMPLATE.to_string(),
        }
    }

    pub fn with_template(mut self, template: impl Into<String>) -> Self {
        self.template = template.into();
        self
    }
}

impl Generator for ExternalGenerator {
    fn generate(&self, condition: &GenerationCondition) -> Result<GenerationRecord, GenerationError> {
        condition.validate()?;
        let prompt = assemble_prompt(condition, &self.template)?;
        let answer = self.client.generate(&prompt)?;
        Ok(GenerationRecord {
            query: condition.query.clone(),
            fragment_ids: condition.fragment_ids(),
            tokens: answer.split_whitespace().map(str::to_string).collect(),
            finished_by: FinishReason::EndToken,
            answer,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_config_names_the_missing_variable() {
        let lookup = |k: &str| match k {
            ENV_ENDPOINT => Some("http://localhost:1/v1/chat/completions".to_string()),
            ENV_MODEL => Some("m".to_string()),
            _ => None,
        };
        let err = ExternalConfig::from_lookup(lookup).unwrap_err();
        assert_eq!(err.class(), "ConfigError");
        assert!(err.to_string().contains(ENV_API_KEY));

        let ok = ExternalConfig::from_lookup(|k| Some(format!("v-{k}"))).unwrap();
        assert_eq!(ok.api_key, format!("v-{ENV_API_KEY}"));
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let mut c = ExternalConfig::new("e", "m", "k");
        c.initial_backoff = Duration::from_millis(100);
        c.max_backoff = Duration::from_millis(350);
        assert_eq!(c.backoff(0), Duration::from_millis(100));
        assert_eq!(c.backoff(1), Duration::from_millis(200));
        assert_eq!(c.backoff(2), Duration::from_millis(350));
        assert_eq!(c.backoff(40), Duration::from_millis(350));
    }
}
