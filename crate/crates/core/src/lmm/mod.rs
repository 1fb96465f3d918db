//! Access to multimodal chat backends.
//!
//! Every step of the loop is one stateless request: the rendered prompt
//! already embeds the idea and the iteration history.

mod fixture;
mod mock;
mod openai;

use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use fixture::{record_exchange, ReplayBackend};
pub use mock::{MockLmm, MockReply};
pub use openai::{build_request_body, parse_response_body, OpenAiChatBackend};

use crate::sync::Limiter;
use crate::templates::LmmRequest;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LmmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("mock script exhausted")]
    ScriptExhausted,
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("backend refused to answer: {0}")]
    Refusal(String),
    #[error("backend rejected the request ({status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    BadResponse(String),
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: Box<LmmError> },
}

impl LmmError {
    /// Transport-class failures are worth another attempt; the rest are not.
    pub fn is_retryable(&self) -> bool {
        matches!(self, LmmError::Transport(_) | LmmError::ScriptExhausted)
    }

    /// The failure underneath any retry wrapper.
    pub fn root(&self) -> &LmmError {
        match self {
            LmmError::ExhaustedRetries { last, .. } => last.root(),
            other => other,
        }
    }
}

/// A multimodal chat backend.
pub trait LmmBackend: Send + Sync {
    fn id(&self) -> &str;

    /// One attempt: returns the backend's full text answer.
    fn complete(&self, request: &LmmRequest) -> Result<String, LmmError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmmBackendDescriptor {
    pub id: String,
    pub endpoint: String,
    pub model_name: String,
    /// Environment variable holding the API key, if the backend needs one.
    #[serde(default)]
    pub auth_env_var: Option<String>,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
}

impl LmmBackendDescriptor {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("backend id is empty".into());
        }
        if self.timeout.is_zero() {
            return Err(format!("backend `{}` has a zero timeout", self.id));
        }
        Ok(())
    }
}

pub(crate) mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// Exponential backoff with full jitter: before retry `k` (0-based), sleep a
/// uniform duration in `[0, min(cap, base * 2^k)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub cap: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            cap: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Retries without sleeping; for tests and offline mocks.
    pub fn immediate() -> Self {
        Self {
            base: Duration::ZERO,
            cap: Duration::ZERO,
        }
    }

    /// Upper bound of the jitter window before retry `retry`.
    pub fn ceiling(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(31)).unwrap_or(u32::MAX);
        self.base.saturating_mul(factor).min(self.cap)
    }

    pub fn delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let ceiling = self.ceiling(retry);
        if ceiling.is_zero() {
            return Duration::ZERO;
        }
        ceiling.mul_f64(rng.random::<f64>())
    }
}

/// A successful completion and how many attempts it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

/// Single attempt.
pub fn complete(backend: &dyn LmmBackend, request: &LmmRequest) -> Result<String, LmmError> {
    backend.complete(request)
}

/// Up to `limit + 1` attempts, retrying only retryable failures.
pub fn complete_with_retry(
    backend: &dyn LmmBackend,
    request: &LmmRequest,
    limit: u32,
    policy: &RetryPolicy,
) -> Result<Completion, LmmError> {
    let mut rng = rand::rng();
    let mut attempts = 0;
    loop {
        attempts += 1;
        match backend.complete(request) {
            Ok(text) => return Ok(Completion { text, attempts }),
            Err(e) if !e.is_retryable() => return Err(e),
            Err(e) if attempts > limit => {
                return Err(LmmError::ExhaustedRetries {
                    attempts,
                    last: Box::new(e),
                })
            }
            Err(e) => {
                let wait = policy.delay(attempts - 1, &mut rng);
                tracing::debug!(backend = backend.id(), attempts, ?wait, error = %e, "retrying model call");
                if !wait.is_zero() {
                    std::thread::sleep(wait);
                }
            }
        }
    }
}

/// Shareable handle bundling a backend with its retry policy and in-flight cap.
#[derive(Clone)]
pub struct LmmGateway {
    backend: Arc<dyn LmmBackend>,
    policy: RetryPolicy,
    limiter: Arc<Limiter>,
}

impl LmmGateway {
    pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

    pub fn new(backend: Arc<dyn LmmBackend>) -> Self {
        Self {
            backend,
            policy: RetryPolicy::default(),
            limiter: Arc::new(Limiter::new(Self::DEFAULT_MAX_IN_FLIGHT)),
        }
    }

    pub fn with_retry_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_max_in_flight(mut self, cap: usize) -> Self {
        self.limiter = Arc::new(Limiter::new(cap));
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn complete(&self, request: &LmmRequest) -> Result<String, LmmError> {
        let _permit = self.limiter.acquire();
        complete(self.backend.as_ref(), request)
    }

    pub fn complete_with_retry(&self, request: &LmmRequest, limit: u32) -> Result<Completion, LmmError> {
        let _permit = self.limiter.acquire();
        complete_with_retry(self.backend.as_ref(), request, limit, &self.policy)
    }
}

impl std::fmt::Debug for LmmGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LmmGateway")
            .field("backend", &self.backend.id())
            .field("policy", &self.policy)
            .finish()
    }
}
