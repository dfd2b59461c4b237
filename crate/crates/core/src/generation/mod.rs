//! Generation conditioned on a query and its retrieved fragments.
//!
//! Two generators sit behind [`Generator`]: a deterministic softmax
//! decoder ([`ToyGenerator`]) and a chat-completion HTTP client
//! ([`ExternalGenerator`]).

mod external;
mod toy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::Embedding;
use crate::index::{FragmentIndex, RankedHits};

pub use external::{ExternalClient, ExternalConfig, ExternalGenerator, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL};
pub use toy::{decode_greedy, softmax, toy_step, ToyDecoderParams, ToyGenerator, END_TOKEN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerationError {
    #[error("non-finite value in logits")]
    NonFiniteInput,
    #[error("shape error: {0}")]
    Shape(String),
    #[error("bad prompt template: {0}")]
    BadTemplate(String),
    #[error("invalid generation request: {0}")]
    InvalidCondition(String),
    #[error("{0}")]
    Config(String),
    #[error("endpoint rejected credentials (HTTP {status})")]
    Auth { status: u16 },
    #[error("request timed out")]
    Timeout,
    #[error("retries exhausted after {attempts} attempts (last HTTP {last_status})")]
    RateLimited { attempts: u32, last_status: u16 },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

impl GenerationError {
    pub fn class(&self) -> &'static str {
        match self {
            GenerationError::NonFiniteInput => "NonFiniteInput",
            GenerationError::Shape(_) => "ShapeError",
            GenerationError::BadTemplate(_) => "BadTemplate",
            GenerationError::InvalidCondition(_) => "UsageError",
            GenerationError::Config(_) => "ConfigError",
            GenerationError::Auth { .. } => "AuthError",
            GenerationError::Timeout => "TimeoutError",
            GenerationError::RateLimited { .. } => "RateLimited",
            GenerationError::Http { .. } => "HttpError",
            GenerationError::Connection(_) => "ConnectionError",
            GenerationError::MalformedResponse(_) => "MalformedResponse",
        }
    }
}

/// One retrieved fragment as seen by a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionFragment {
    pub id: String,
    pub payload: String,
    pub embedding: Embedding,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationCondition {
    pub query: String,
    /// In retrieval rank order.
    pub fragments: Vec<ConditionFragment>,
    pub max_tokens: usize,
    /// Vocabulary index of the end token (toy decoder only).
    pub end_token: usize,
}

impl GenerationCondition {
    /// Builds a condition from ranked hits, pulling payloads and embeddings
    /// out of `index`.
    pub fn from_hits(
        query: impl Into<String>,
        hits: &RankedHits,
        index: &FragmentIndex,
        max_tokens: usize,
        end_token: usize,
    ) -> Self {
        let fragments = hits
            .hits
            .iter()
            .filter_map(|h| {
                index.get(h.fragment_id.as_str()).map(|e| ConditionFragment {
                    id: h.fragment_id.to_string(),
                    payload: e.payload.clone(),
                    embedding: e.embedding.clone(),
                    score: h.score,
                })
            })
            .collect();
        GenerationCondition {
            query: query.into(),
            fragments,
            max_tokens,
            end_token,
        }
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.max_tokens == 0 {
            return Err(GenerationError::InvalidCondition("max_tokens must be >= 1".into()));
        }
        Ok(())
    }

    pub fn fragment_ids(&self) -> Vec<String> {
        self.fragments.iter().map(|f| f.id.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    EndToken,
    MaxTokens,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub query: String,
    pub fragment_ids: Vec<String>,
    /// Emitted tokens, never including the end token.
    pub tokens: Vec<String>,
    pub finished_by: FinishReason,
    pub answer: String,
}

pub trait Generator: Send + Sync {
    fn generate(&self, condition: &GenerationCondition) -> Result<GenerationRecord, GenerationError>;

    /// Vocabulary index to put in [`GenerationCondition::end_token`].
    fn end_token(&self) -> usize {
        0
    }
}

pub const DEFAULT_TEMPLATE: &str =
    "Answer the question using the knowledge fragments below.\n\nFragments:\n{fragments}\nQuestion: {query}\nAnswer:";

/// Fills `{query}` and `{fragments}`. Fragments are rendered in rank order,
/// one `[id] payload` line each (every line newline-terminated).
pub fn assemble_prompt(condition: &GenerationCondition, template: &str) -> Result<String, GenerationError> {
    for placeholder in ["{query}", "{fragments}"] {
        if !template.contains(placeholder) {
            return Err(GenerationError::BadTemplate(format!("missing {placeholder}")));
        }
    }
    let block: String = condition
        .fragments
        .iter()
        .map(|f| format!("[{}] {}\n", f.id, f.payload.replace('\n', " ")))
        .collect();
    // Split before substituting so payload text containing "{query}" stays literal.
    let (head, tail) = template.split_once("{fragments}").expect("checked above");
    Ok(format!(
        "{}{}{}",
        head.replace("{query}", &condition.query),
        block,
        tail.replace("{query}", &condition.query)
    ))
}
