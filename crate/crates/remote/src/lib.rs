//! HTTP implementations of the retriever and policy traits.
//!
//! Both clients are blocking, retry timeouts, connection failures, 429 and
//! 5xx responses with exponential backoff, and surface everything else as a
//! [`TransportError`] immediately.

use std::thread;
use std::time::Duration;

use agentrank_core::policy::TransportError;
use serde::de::DeserializeOwned;
use serde::Serialize;

mod chat;
mod retriever;

pub use chat::ChatPolicy;
pub use retriever::RemoteRetriever;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, backoff: Duration::from_millis(500), timeout: Duration::from_secs(120) }
    }
}

struct Http {
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl Http {
    fn new(retry: RetryPolicy) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(retry.timeout))
            .http_status_as_error(false)
            .build();
        Self { agent: config.into(), retry }
    }

    /// POSTs `body` and decodes the JSON reply. `auth` is `(env var, token)`.
    fn post<B: Serialize, T: DeserializeOwned>(
        &self,
        url: &str,
        body: &B,
        auth: Option<(&str, &str)>,
    ) -> Result<T, TransportError> {
        let mut attempt = 0;
        let mut delay = self.retry.backoff;
        loop {
            attempt += 1;
            let err = match self.post_once(url, body, auth, attempt) {
                Ok(v) => return Ok(v),
                Err(e) => e,
            };
            if !err.is_retryable() || attempt >= self.retry.max_attempts.max(1) {
                return Err(err);
            }
            log::warn!("POST {url} attempt {attempt} failed: {err}; retrying in {delay:?}");
            thread::sleep(delay);
            delay *= 2;
        }
    }

    fn post_once<B: Serialize, T: DeserializeOwned>(
        &self,
        url: &str,
        body: &B,
        auth: Option<(&str, &str)>,
        attempts: u32,
    ) -> Result<T, TransportError> {
        let mut req = self.agent.post(url);
        if let Some((_, token)) = auth {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| classify(e, attempts))?;
        let code = resp.status().as_u16();
        match code {
            200..=299 => resp
                .body_mut()
                .read_json()
                .map_err(|e| TransportError::Malformed(e.to_string())),
            401 | 403 => Err(TransportError::Auth {
                env_var: auth.map_or_else(|| "API key".to_owned(), |(var, _)| var.to_owned()),
            }),
            _ => Err(TransportError::Status { code, attempts }),
        }
    }
}

fn classify(e: ureq::Error, attempts: u32) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout { attempts },
        ureq::Error::StatusCode(code) => TransportError::Status { code, attempts },
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => TransportError::Timeout { attempts },
        ureq::Error::Json(e) => TransportError::Malformed(e.to_string()),
        other => TransportError::Connect(other.to_string()),
    }
}
