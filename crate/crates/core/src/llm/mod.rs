//! Chat-completion access: a provider trait, the retrying/audited gateway in
//! front of it, and constrained completions.

mod builtin;
mod constraint;
mod http;
mod mock;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use constraint::{Constrained, OutputConstraint};
pub use http::HttpProvider;
pub use mock::{
    MatchSpec, Matcher, MockProvider, MockReply, MockRule, MockScript, ReplySpec, RuleSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<Message>,
    /// `None` leaves the provider default in place.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if let Some(t) = self.temperature {
            if t.is_nan() || t < 0.0 {
                return Err(GatewayError::InvalidRequest(format!(
                    "temperature must be >= 0, got {t}"
                )));
            }
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    /// All message contents joined, for matching and auditing.
    pub fn transcript_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// Failure from a single provider call.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("provider refused: {0}")]
    Refusal(String),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("provider refused: {0}")]
    Refusal(String),
    #[error("no valid output after {attempts} attempts; last output: {last_raw:?}")]
    ConstraintExhausted { attempts: u32, last_raw: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// A chat-completion backend.
pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;

    /// One completion. `format` is only passed when
    /// [`supports_structured_output`](Self::supports_structured_output) is true.
    fn send(
        &self,
        req: &CompletionRequest,
        format: Option<&OutputConstraint>,
    ) -> Result<String, ProviderError>;

    fn supports_structured_output(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
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

    pub fn delay_for(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.min(16));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Token bucket shared by every caller of one gateway.
#[derive(Debug)]
struct TokenBucket {
    capacity: f64,
    tokens: f64,
    per_second: f64,
    last: Instant,
}

impl TokenBucket {
    fn new(per_second: f64, burst: u32) -> Self {
        let capacity = f64::from(burst.max(1));
        Self {
            capacity,
            tokens: capacity,
            per_second,
            last: Instant::now(),
        }
    }

    /// Take one token, returning how long the caller must wait first.
    fn take(&mut self) -> Duration {
        let now = Instant::now();
        let elapsed = now.duration_since(self.last).as_secs_f64();
        self.last = now;
        self.tokens = (self.tokens + elapsed * self.per_second).min(self.capacity);
        self.tokens -= 1.0;
        if self.tokens >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-self.tokens / self.per_second)
        }
    }
}

/// One `complete` call as recorded in the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: usize,
    pub provider: String,
    pub request: CompletionRequest,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint: Option<OutputConstraint>,
    pub attempts: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Default)]
struct AuditLog {
    count: usize,
    keep: bool,
    entries: Vec<AuditEntry>,
    file: Option<BufWriter<File>>,
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Retrying, rate-limited, audited access to one provider.
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    model: String,
    retry: RetryPolicy,
    bucket: Option<Mutex<TokenBucket>>,
    audit: Mutex<AuditLog>,
    provider_calls: AtomicUsize,
    sleep: Sleeper,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.name())
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            provider,
            model: "default".to_string(),
            retry: RetryPolicy::default(),
            bucket: None,
            audit: Mutex::new(AuditLog::default()),
            provider_calls: AtomicUsize::new(0),
            sleep: Arc::new(std::thread::sleep),
        }
    }

    /// A gateway over [`MockProvider`] with no retry delays.
    pub fn mock(provider: MockProvider) -> Self {
        Self::new(Arc::new(provider))
            .with_model("mock")
            .with_retry(RetryPolicy {
                base_delay: Duration::ZERO,
                ..RetryPolicy::default()
            })
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, per_second: f64, burst: u32) -> Self {
        if per_second > 0.0 {
            self.bucket = Some(Mutex::new(TokenBucket::new(per_second, burst)));
        }
        self
    }

    /// Replace the function used to wait between retries.
    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    /// Append every call to a JSONL file.
    pub fn with_audit_file(self, path: &Path) -> std::io::Result<Self> {
        let file = File::create(path)?;
        self.audit.lock().expect("audit lock").file = Some(BufWriter::new(file));
        Ok(self)
    }

    /// Keep audit entries in memory (see [`audit_entries`](Self::audit_entries)).
    pub fn with_memory_audit(self) -> Self {
        self.audit.lock().expect("audit lock").keep = true;
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    /// A single-message request with the default model and provider
    /// temperature.
    pub fn request(&self, prompt: impl Into<String>) -> CompletionRequest {
        self.request_with(vec![Message::user(prompt)])
    }

    pub fn request_with(&self, messages: Vec<Message>) -> CompletionRequest {
        CompletionRequest {
            model: self.model.clone(),
            messages,
            temperature: None,
            max_tokens: 1024,
        }
    }

    /// Number of provider calls made so far, retries included.
    pub fn provider_calls(&self) -> usize {
        self.provider_calls.load(Ordering::SeqCst)
    }

    /// Number of `complete` calls recorded in the audit log.
    pub fn audit_count(&self) -> usize {
        self.audit.lock().expect("audit lock").count
    }

    pub fn audit_entries(&self) -> Vec<AuditEntry> {
        self.audit.lock().expect("audit lock").entries.clone()
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        self.complete_inner(req, None)
    }

    fn complete_inner(
        &self,
        req: &CompletionRequest,
        format: Option<&OutputConstraint>,
    ) -> Result<String, GatewayError> {
        req.validate()?;
        let format = format.filter(|_| self.provider.supports_structured_output());
        let mut attempts = 0;
        let result = loop {
            if let Some(bucket) = &self.bucket {
                let wait = bucket.lock().expect("bucket lock").take();
                if !wait.is_zero() {
                    (self.sleep)(wait);
                }
            }
            attempts += 1;
            self.provider_calls.fetch_add(1, Ordering::SeqCst);
            match self.provider.send(req, format) {
                Ok(text) => break Ok(text),
                Err(ProviderError::Transport(message)) => {
                    if attempts > self.retry.max_retries {
                        break Err(GatewayError::Transport { attempts, message });
                    }
                    tracing::debug!(attempts, %message, "retrying after transport error");
                    (self.sleep)(self.retry.delay_for(attempts - 1));
                }
                Err(ProviderError::Auth(m)) => break Err(GatewayError::Auth(m)),
                Err(ProviderError::Refusal(m)) => break Err(GatewayError::Refusal(m)),
            }
        };
        self.record(req, format, attempts, &result);
        result
    }

    fn record(
        &self,
        req: &CompletionRequest,
        format: Option<&OutputConstraint>,
        attempts: u32,
        result: &Result<String, GatewayError>,
    ) {
        let mut log = self.audit.lock().expect("audit lock");
        log.count += 1;
        if !log.keep && log.file.is_none() {
            return;
        }
        let entry = AuditEntry {
            seq: log.count,
            provider: self.provider.name().to_string(),
            request: req.clone(),
            constraint: format.cloned(),
            attempts,
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(ToString::to_string),
        };
        if let Some(file) = log.file.as_mut() {
            let line = serde_json::to_string(&entry).expect("audit entry serializes");
            if let Err(e) = writeln!(file, "{line}").and_then(|_| file.flush()) {
                tracing::warn!(error = %e, "could not write audit log");
            }
        }
        if log.keep {
            log.entries.push(entry);
        }
    }

    /// Complete until the output satisfies `constraint`, regenerating up to
    /// `max_attempts` times. Runs at temperature 0.
    pub fn complete_constrained(
        &self,
        req: &CompletionRequest,
        constraint: &OutputConstraint,
        max_attempts: u32,
    ) -> Result<Constrained, GatewayError> {
        if max_attempts == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_attempts must be at least 1".into(),
            ));
        }
        constraint
            .check_well_formed()
            .map_err(GatewayError::InvalidRequest)?;
        let mut req = req.clone();
        req.temperature = Some(0.0);
        let mut last_raw = String::new();
        for attempt in 1..=max_attempts {
            let raw = self.complete_inner(&req, Some(constraint))?;
            match constraint.validate(&raw) {
                Ok(v) => return Ok(v),
                Err(reason) => {
                    tracing::debug!(attempt, %reason, "constrained output rejected");
                    last_raw = raw;
                }
            }
        }
        Err(GatewayError::ConstraintExhausted {
            attempts: max_attempts,
            last_raw,
        })
    }
}
