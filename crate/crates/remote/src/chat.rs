use agentrank_core::policy::{Policy, TransportError};
use agentrank_core::protocol::ChatMessage;
use serde::{Deserialize, Serialize};

use crate::{Http, RetryPolicy};

#[derive(Serialize)]
struct Request<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct Response {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

/// OpenAI-compatible `/chat/completions` client.
pub struct ChatPolicy {
    url: String,
    model: String,
    temperature: f64,
    seed: Option<u64>,
    /// Environment variable name and the token read from it.
    auth: Option<(String, String)>,
    http: Http,
}

impl ChatPolicy {
    pub fn new(endpoint: &str, model: impl Into<String>, retry: RetryPolicy) -> Self {
        Self {
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            model: model.into(),
            temperature: 1.0,
            seed: None,
            auth: None,
            http: Http::new(retry),
        }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Reads the bearer token from `env_var`; a missing variable is an
    /// authentication error naming it.
    pub fn api_key_env(mut self, env_var: &str) -> Result<Self, TransportError> {
        let token = std::env::var(env_var).map_err(|_| TransportError::Auth { env_var: env_var.to_owned() })?;
        self.auth = Some((env_var.to_owned(), token));
        Ok(self)
    }
}

impl Policy for ChatPolicy {
    fn generate(&self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        let body = Request { model: &self.model, messages, temperature: self.temperature, seed: self.seed };
        let auth = self.auth.as_ref().map(|(v, t)| (v.as_str(), t.as_str()));
        let resp: Response = self.http.post(&self.url, &body, auth)?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|c| !c.is_empty())
            .ok_or(TransportError::EmptyContent)
    }
}
