//! Plumbing shared by the description and embedding backends: error
//! classification, retry with exponential backoff and a small JSON-over-HTTP
//! client.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub const API_KEY_ENV: &str = "EXEMVAD_API_KEY";

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: connection failures, timeouts, 429 and 5xx.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend failure: {0}")]
    Fatal(String),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transient(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 4,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            ..Self::default()
        }
    }

    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.min(31)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Runs `op` until it succeeds, fails fatally, or retries run out.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    std::thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Blocking JSON client for the backend wire contracts.
#[derive(Clone, Debug)]
pub struct JsonClient {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl JsonClient {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            agent,
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        let payload = serde_json::to_string(body).map_err(|e| BackendError::Fatal(e.to_string()))?;
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(payload)
            .map_err(|e| BackendError::Transient(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(format!("{url}: reading body: {e}")))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| BackendError::Fatal(format!("{url}: malformed response: {e}"))),
            408 | 429 | 500..=599 => Err(BackendError::Transient(format!("{url}: HTTP {status}: {text}"))),
            _ => Err(BackendError::Fatal(format!("{url}: HTTP {status}: {text}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_retries: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(500),
        };
        assert_eq!(p.delay(0), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(400));
        assert_eq!(p.delay(3), Duration::from_millis(500));
        assert_eq!(p.delay(40), Duration::from_millis(500));
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let calls = Cell::new(0);
        let r = RetryPolicy::immediate(3).run(|| {
            calls.set(calls.get() + 1);
            if calls.get() < 3 {
                Err(BackendError::Transient("busy".into()))
            } else {
                Ok(7)
            }
        });
        assert_eq!(r, Ok(7));
        assert_eq!(calls.get(), 3);
    }

    #[test]
    fn fatal_is_not_retried_and_budget_is_bounded() {
        let calls = Cell::new(0);
        let r: Result<(), _> = RetryPolicy::immediate(5).run(|| {
            calls.set(calls.get() + 1);
            Err(BackendError::Fatal("bad request".into()))
        });
        assert!(r.is_err());
        assert_eq!(calls.get(), 1);

        calls.set(0);
        let r: Result<(), _> = RetryPolicy::immediate(2).run(|| {
            calls.set(calls.get() + 1);
            Err(BackendError::Transient("down".into()))
        });
        assert!(r.unwrap_err().is_transient());
        assert_eq!(calls.get(), 3);
    }
}
