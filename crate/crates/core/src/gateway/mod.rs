//! OpenAI-compatible chat-completion client for the coding LLM and the
//! feedback VLM.

mod mock;
mod turns;

pub use mock::{Matcher, MockReply, MockScript, MockServer, RecordedRequest, ScriptedResponse};
pub use turns::{trajectory_to_turns, TurnOptions};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use std::sync::{Arc, Mutex};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelRole {
    CodingLlm,
    FeedbackVlm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 500,
            multiplier: 2.0,
            max_backoff_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = self.multiplier.max(1.0).powi(attempt.saturating_sub(1) as i32);
        let ms = (self.initial_backoff_ms as f64 * factor).min(self.max_backoff_ms as f64);
        Duration::from_millis(ms as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model: String,
    pub role: ModelRole,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_request_timeout")]
    pub request_timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_temperature() -> f64 {
    0.5
}

fn default_request_timeout() -> u64 {
    300
}

impl ModelEndpoint {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, role: ModelRole) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            role,
            temperature: default_temperature(),
            max_tokens: None,
            api_key_env: None,
            request_timeout_secs: default_request_timeout(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidEndpoint(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.retry.max_attempts == 0 {
            return Err(GatewayError::InvalidEndpoint("retry.max_attempts must be >= 1".into()));
        }
        if self.base_url.trim().is_empty() || self.model.trim().is_empty() {
            return Err(GatewayError::InvalidEndpoint("base_url and model are required".into()));
        }
        Ok(())
    }

    fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContentPart {
    Text(String),
    /// Base64 image data with its MIME type.
    Image {
        mime: String,
        data: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub parts: Vec<ContentPart>,
}

impl ChatTurn {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            parts: vec![ContentPart::Text(text.into())],
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::text(Role::User, text)
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self::text(Role::Assistant, text)
    }

    pub fn user_with_png(text: impl Into<String>, png: &[u8]) -> Self {
        use base64::Engine;
        Self {
            role: Role::User,
            parts: vec![
                ContentPart::Image {
                    mime: "image/png".into(),
                    data: base64::engine::general_purpose::STANDARD.encode(png),
                },
                ContentPart::Text(text.into()),
            ],
        }
    }

    pub fn has_image(&self) -> bool {
        self.parts.iter().any(|p| matches!(p, ContentPart::Image { .. }))
    }

    /// Concatenated text parts.
    pub fn plain_text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text(t) => Some(t.as_str()),
                _ => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
        self.total_tokens += rhs.total_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: ModelRole,
    pub model: String,
    pub attempts: u32,
    pub ok: bool,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSummary {
    pub calls: u64,
    pub attempts: u64,
    pub failed_calls: u64,
    pub tokens: TokenUsage,
}

impl UsageSummary {
    pub fn from_records(records: &[CallRecord]) -> Self {
        let mut s = UsageSummary::default();
        for r in records {
            s.calls += 1;
            s.attempts += r.attempts as u64;
            s.failed_calls += (!r.ok) as u64;
            s.tokens += r.usage;
        }
        s
    }

    pub fn merge(&mut self, other: &UsageSummary) {
        self.calls += other.calls;
        self.attempts += other.attempts;
        self.failed_calls += other.failed_calls;
        self.tokens += other.tokens;
    }
}

/// Per-call accounting shared by everything that talks to one gateway.
#[derive(Debug, Clone, Default)]
pub struct UsageLedger {
    records: Arc<Mutex<Vec<CallRecord>>>,
}

impl UsageLedger {
    pub fn record(&self, record: CallRecord) {
        self.records.lock().expect("usage ledger poisoned").push(record);
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.records.lock().expect("usage ledger poisoned").clone()
    }

    pub fn summary(&self) -> UsageSummary {
        UsageSummary::from_records(&self.records())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("chat request has no turns")]
    EmptyRequest,
    #[error("image parts are only accepted by the feedback VLM endpoint")]
    ImageOnTextEndpoint,
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("context length exceeded: {0}")]
    ContextLength(String),
    #[error("request rejected with status {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("gave up after {attempts} attempts (last status {last_status:?}): {message}")]
    Exhausted {
        attempts: u32,
        last_status: Option<u16>,
        message: String,
    },
}

#[async_trait]
pub trait ChatModel: Send + Sync {
    async fn complete(&self, endpoint: &ModelEndpoint, turns: &[ChatTurn]) -> Result<Completion, GatewayError>;

    fn usage(&self) -> UsageSummary {
        UsageSummary::default()
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: Role,
    content: WireContent<'a>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum WireContent<'a> {
    Text(&'a str),
    Parts(Vec<WirePart<'a>>),
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum WirePart<'a> {
    Text { text: &'a str },
    ImageUrl { image_url: WireImage },
}

#[derive(Serialize)]
struct WireImage {
    url: String,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Serialized `/chat/completions` body. Identical inputs give identical
/// bytes.
pub fn request_body(endpoint: &ModelEndpoint, turns: &[ChatTurn]) -> Vec<u8> {
    let messages = turns
        .iter()
        .map(|turn| {
            let content = match turn.parts.as_slice() {
                [ContentPart::Text(t)] => WireContent::Text(t),
                parts => WireContent::Parts(
                    parts
                        .iter()
                        .map(|p| match p {
                            ContentPart::Text(text) => WirePart::Text { text },
                            ContentPart::Image { mime, data } => WirePart::ImageUrl {
                                image_url: WireImage {
                                    url: format!("data:{mime};base64,{data}"),
                                },
                            },
                        })
                        .collect(),
                ),
            };
            WireMessage {
                role: turn.role,
                content,
            }
        })
        .collect();
    serde_json::to_vec(&WireRequest {
        model: &endpoint.model,
        messages,
        temperature: endpoint.temperature,
        max_tokens: endpoint.max_tokens,
    })
    .expect("request serializes")
}

fn is_context_length(status: u16, body: &str) -> bool {
    if !(status == 400 || status == 413) {
        return false;
    }
    let lower = body.to_ascii_lowercase();
    lower.contains("context_length_exceeded")
        || lower.contains("context length")
        || lower.contains("maximum context")
        || lower.contains("too many tokens")
}

/// HTTP implementation of [`ChatModel`].
#[derive(Debug, Clone)]
pub struct HttpGateway {
    client: reqwest::Client,
    ledger: UsageLedger,
}

impl Default for HttpGateway {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpGateway {
    pub fn new() -> Self {
        Self {
            client: reqwest::Client::new(),
            ledger: UsageLedger::default(),
        }
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    async fn attempt(&self, endpoint: &ModelEndpoint, body: &[u8]) -> Result<(String, TokenUsage), AttemptError> {
        let mut req = self
            .client
            .post(endpoint.completions_url())
            .timeout(Duration::from_secs(endpoint.request_timeout_secs))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec());
        if let Some(var) = &endpoint.api_key_env {
            if let Ok(key) = std::env::var(var) {
                req = req.bearer_auth(key);
            }
        }
        let resp = req.send().await.map_err(|e| AttemptError::Transient {
            status: None,
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        let text = resp.text().await.map_err(|e| AttemptError::Transient {
            status: Some(status),
            message: e.to_string(),
        })?;
        if (200..300).contains(&status) {
            let parsed: WireResponse = serde_json::from_str(&text).map_err(|e| AttemptError::Transient {
                status: Some(status),
                message: format!("malformed response body: {e}"),
            })?;
            let content = parsed
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
                .ok_or_else(|| AttemptError::Transient {
                    status: Some(status),
                    message: "response has no message content".into(),
                })?;
            return Ok((content, parsed.usage.unwrap_or_default()));
        }
        if is_context_length(status, &text) {
            return Err(AttemptError::Fatal(GatewayError::ContextLength(text)));
        }
        if status == 429 || status == 408 || status >= 500 {
            return Err(AttemptError::Transient {
                status: Some(status),
                message: text,
            });
        }
        Err(AttemptError::Fatal(GatewayError::Rejected { status, message: text }))
    }
}

enum AttemptError {
    Transient { status: Option<u16>, message: String },
    Fatal(GatewayError),
}

#[async_trait]
impl ChatModel for HttpGateway {
    async fn complete(&self, endpoint: &ModelEndpoint, turns: &[ChatTurn]) -> Result<Completion, GatewayError> {
        if turns.is_empty() {
            return Err(GatewayError::EmptyRequest);
        }
        if endpoint.role != ModelRole::FeedbackVlm && turns.iter().any(ChatTurn::has_image) {
            return Err(GatewayError::ImageOnTextEndpoint);
        }
        endpoint.validate()?;
        let body = request_body(endpoint, turns);

        let mut attempts = 0;
        let (last_status, message) = loop {
            attempts += 1;
            match self.attempt(endpoint, &body).await {
                Ok((text, usage)) => {
                    self.ledger.record(CallRecord {
                        role: endpoint.role,
                        model: endpoint.model.clone(),
                        attempts,
                        ok: true,
                        usage,
                    });
                    return Ok(Completion { text, usage, attempts });
                }
                Err(AttemptError::Fatal(e)) => {
                    self.ledger.record(CallRecord {
                        role: endpoint.role,
                        model: endpoint.model.clone(),
                        attempts,
                        ok: false,
                        usage: TokenUsage::default(),
                    });
                    return Err(e);
                }
                Err(AttemptError::Transient { status, message }) => {
                    tracing::warn!(attempt = attempts, ?status, "chat completion failed: {message}");
                    if attempts >= endpoint.retry.max_attempts {
                        break (status, message);
                    }
                    tokio::time::sleep(endpoint.retry.backoff(attempts)).await;
                }
            }
        };
        self.ledger.record(CallRecord {
            role: endpoint.role,
            model: endpoint.model.clone(),
            attempts,
            ok: false,
            usage: TokenUsage::default(),
        });
        Err(GatewayError::Exhausted {
            attempts,
            last_status,
            message,
        })
    }

    fn usage(&self) -> UsageSummary {
        self.ledger.summary()
    }
}

/// Wraps another model and keeps its own per-call ledger, so one run's
/// usage can be reported even when the inner gateway is shared.
pub struct MeteredModel {
    inner: Arc<dyn ChatModel>,
    ledger: UsageLedger,
}

impl MeteredModel {
    pub fn new(inner: Arc<dyn ChatModel>) -> Self {
        Self {
            inner,
            ledger: UsageLedger::default(),
        }
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }
}

#[async_trait]
impl ChatModel for MeteredModel {
    async fn complete(&self, endpoint: &ModelEndpoint, turns: &[ChatTurn]) -> Result<Completion, GatewayError> {
        let result = self.inner.complete(endpoint, turns).await;
        let (attempts, ok, usage) = match &result {
            Ok(c) => (c.attempts, true, c.usage),
            Err(GatewayError::Exhausted { attempts, .. }) => (*attempts, false, TokenUsage::default()),
            Err(_) => (1, false, TokenUsage::default()),
        };
        self.ledger.record(CallRecord {
            role: endpoint.role,
            model: endpoint.model.clone(),
            attempts,
            ok,
            usage,
        });
        result
    }

    fn usage(&self) -> UsageSummary {
        self.ledger.summary()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            initial_backoff_ms: 100,
            multiplier: 2.0,
            max_backoff_ms: 300,
        };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(300));
    }

    #[test]
    fn request_body_shape() {
        let ep = ModelEndpoint::new("http://x", "coder", ModelRole::CodingLlm);
        let body = request_body(&ep, &[ChatTurn::user("hi"), ChatTurn::assistant("yo")]);
        assert_eq!(
            String::from_utf8(body).unwrap(),
            r#"{"model":"coder","messages":[{"role":"user","content":"hi"},{"role":"assistant","content":"yo"}],"temperature":0.5}"#
        );
        let vlm = ModelEndpoint::new("http://x", "vlm", ModelRole::FeedbackVlm);
        let body = request_body(&vlm, &[ChatTurn::user_with_png("look", &[1, 2, 3])]);
        let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(v["messages"][0]["content"][0]["type"], "image_url");
        assert_eq!(
            v["messages"][0]["content"][0]["image_url"]["url"],
            "data:image/png;base64,AQID"
        );
        assert_eq!(v["messages"][0]["content"][1]["text"], "look");
    }

    #[test]
    fn context_length_detection() {
        assert!(is_context_length(
            400,
            r#"{"error":{"code":"context_length_exceeded","message":"..."}}"#
        ));
        assert!(is_context_length(
            400,
            "This model's maximum context length is 8192 tokens"
        ));
        assert!(!is_context_length(500, "context_length_exceeded"));
        assert!(!is_context_length(400, "bad request"));
    }

    #[test]
    fn endpoint_validation() {
        let mut ep = ModelEndpoint::new("http://x", "m", ModelRole::CodingLlm);
        assert!(ep.validate().is_ok());
        ep.temperature = -0.1;
        assert!(ep.validate().is_err());
        ep.temperature = f64::NAN;
        assert!(ep.validate().is_err());
    }
}
