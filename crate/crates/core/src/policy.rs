//! Text generators driving the agent and the ranker.
//!
//! A [`Policy`] is an opaque `messages -> text` function. Remote
//! chat-completion clients live in a separate crate; this module carries the
//! trait, the shared transport error, and the table-driven scripted policy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{top_title, ChatMessage, Role};

/// Infrastructure failures. These abort a rollout and are retried by the
/// orchestrator; they are never scored as format violations.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("server returned HTTP {code} after {attempts} attempt(s)")]
    Status { code: u16, attempts: u32 },
    #[error("authentication rejected; check the {env_var} environment variable")]
    Auth { env_var: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("response carried no message content")]
    EmptyContent,
    #[error("script has no entry for turn {turn}")]
    ScriptExhausted { turn: usize },
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            TransportError::Timeout { .. }
                | TransportError::Connect(_)
                | TransportError::Status { code: 500..=599, .. }
                | TransportError::Status { code: 429, .. }
        )
    }
}

pub trait Policy: Send + Sync {
    fn generate(&self, messages: &[ChatMessage]) -> Result<String, TransportError>;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn generate(&self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        (**self).generate(messages)
    }
}

/// Emits `turns[i]` on the i-th assistant turn of a conversation.
///
/// Entries may reference `{question}` (the question line of the first
/// message) and `{top_title}` (title of the first document in the latest
/// observation). A reference that cannot be resolved expands to the empty
/// string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub turns: Vec<String>,
}

impl ScriptedPolicy {
    pub fn new<S: Into<String>>(turns: impl IntoIterator<Item = S>) -> Self {
        Self { turns: turns.into_iter().map(Into::into).collect() }
    }
}

impl Policy for ScriptedPolicy {
    fn generate(&self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        let turn = messages.iter().filter(|m| m.role == Role::Assistant).count();
        let entry = self
            .turns
            .get(turn)
            .ok_or(TransportError::ScriptExhausted { turn })?;

        let question = messages
            .first()
            .and_then(|m| m.content.lines().rev().find_map(question_line))
            .unwrap_or_default();
        let title = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .and_then(|m| top_title(&m.content))
            .unwrap_or_default();
        Ok(entry.replace("{question}", question).replace("{top_title}", title))
    }
}

fn question_line(line: &str) -> Option<&str> {
    line.strip_prefix("Question: ")
        .or_else(|| line.strip_prefix("Original Question: "))
}
