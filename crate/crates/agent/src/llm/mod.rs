//! Chat-completion and embedding clients behind a common [`Transport`].
//!
//! [`LiveTransport`] speaks the OpenAI-compatible HTTP wire format,
//! [`ScriptedTransport`] replays fixtures offline and
//! [`RecordingTransport`] captures a run as a replayable fixture.

mod embed;
mod live;
mod recording;
mod scripted;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{hashed_embedding, HASHED_EMBEDDING_DIM, HASHED_EMBEDDING_MODEL};
pub use live::{LiveConfig, LiveTransport, RetryPolicy, API_KEY_ENV, BASE_URL_ENV, MODEL_ENV};
pub use recording::RecordingTransport;
pub use scripted::{Fixture, FixtureResponse, ScriptedTransport};

/// Sampling temperature for candidate generation.
pub const GENERATION_TEMPERATURE: f64 = 0.7;
/// Sampling temperature for data and image summaries.
pub const SUMMARY_TEMPERATURE: f64 = 1.0;
pub const GENERATION_MAX_TOKENS: u32 = 4096;
pub const SUMMARY_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_MAX_CONCURRENCY: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// An encoded raster image attached to a message.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub mime: String,
    #[serde(with = "b64")]
    pub data: Vec<u8>,
}

impl fmt::Debug for ImagePayload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ImagePayload({}, {} bytes)", self.mime, self.data.len())
    }
}

impl ImagePayload {
    pub fn png(data: Vec<u8>) -> Self {
        Self {
            mime: "image/png".into(),
            data,
        }
    }

    pub fn data_url(&self) -> String {
        use base64::Engine;
        format!(
            "data:{};base64,{}",
            self.mime,
            base64::engine::general_purpose::STANDARD.encode(&self.data)
        )
    }
}

mod b64 {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(text)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImagePayload>,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
            image: None,
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
            image: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Empty means the transport's configured model.
    #[serde(default)]
    pub model_id: String,
    /// Stable label used for fixture lookup and error reports.
    pub correlation_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    /// Single user message at the generation temperature.
    pub fn generation(prompt: impl Into<String>, correlation_id: impl Into<String>) -> Self {
        Self {
            messages: vec![Message::user(prompt)],
            temperature: GENERATION_TEMPERATURE,
            max_tokens: GENERATION_MAX_TOKENS,
            model_id: String::new(),
            correlation_id: correlation_id.into(),
            seed: None,
        }
    }

    /// Single user message at the summary temperature.
    pub fn summary(prompt: impl Into<String>, correlation_id: impl Into<String>) -> Self {
        Self {
            temperature: SUMMARY_TEMPERATURE,
            max_tokens: SUMMARY_MAX_TOKENS,
            ..Self::generation(prompt, correlation_id)
        }
    }

    pub fn with_image(mut self, image: ImagePayload) -> Self {
        if let Some(m) = self.messages.iter_mut().rev().find(|m| m.role == Role::User) {
            m.image = Some(image);
        }
        self
    }

    pub fn has_image(&self) -> bool {
        self.messages.iter().any(|m| m.image.is_some())
    }

    /// Concatenated text of all user messages.
    pub fn prompt_text(&self) -> String {
        let parts: Vec<&str> = self
            .messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect();
        parts.join("\n")
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |reason: &str| {
            Err(LlmError::InvalidRequest {
                correlation_id: self.correlation_id.clone(),
                reason: reason.into(),
            })
        };
        if self.messages.is_empty() {
            return bad("request has no messages");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must lie in [0, 2]");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub requests: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("[{correlation_id}] invalid request: {reason}")]
    InvalidRequest { correlation_id: String, reason: String },
    #[error("[{correlation_id}] request timed out")]
    Timeout { correlation_id: String },
    #[error("[{correlation_id}] HTTP {status}: {body}")]
    Http {
        correlation_id: String,
        status: u16,
        body: String,
    },
    #[error("[{correlation_id}] network error: {message}")]
    Network { correlation_id: String, message: String },
    #[error("[{correlation_id}] malformed response: {message}")]
    Decode { correlation_id: String, message: String },
    #[error("[{correlation_id}] scripted fixtures exhausted")]
    Exhausted { correlation_id: String },
    #[error("[{correlation_id}] transport {transport} does not support {capability}")]
    Capability {
        correlation_id: String,
        transport: String,
        capability: &'static str,
    },
    #[error("fixture: {0}")]
    Fixture(String),
}

impl LlmError {
    pub fn correlation_id(&self) -> Option<&str> {
        match self {
            LlmError::InvalidRequest { correlation_id, .. }
            | LlmError::Timeout { correlation_id }
            | LlmError::Http { correlation_id, .. }
            | LlmError::Network { correlation_id, .. }
            | LlmError::Decode { correlation_id, .. }
            | LlmError::Exhausted { correlation_id }
            | LlmError::Capability { correlation_id, .. } => Some(correlation_id),
            LlmError::Fixture(_) => None,
        }
    }
}

/// A chat and embedding backend. Implementations are shareable across threads.
pub trait Transport: Send + Sync {
    fn name(&self) -> &str;

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;

    fn supports_images(&self) -> bool;

    /// One vector per text, all of the same length.
    fn embed(&self, texts: &[String], correlation_id: &str) -> Result<Vec<Vec<f64>>, LlmError>;

    /// Identifies the embedding space, e.g. `hashed-bow-256`.
    fn embedding_model(&self) -> String;

    /// Upper bound on simultaneous in-flight requests.
    fn max_concurrency(&self) -> usize {
        DEFAULT_MAX_CONCURRENCY
    }

    /// Cumulative usage since construction.
    fn usage(&self) -> Usage;
}

/// Sends `request` with `image` attached to its last user message.
pub fn chat_image(
    transport: &dyn Transport,
    request: ChatRequest,
    image: ImagePayload,
) -> Result<ChatResponse, LlmError> {
    if !transport.supports_images() {
        return Err(LlmError::Capability {
            correlation_id: request.correlation_id,
            transport: transport.name().to_string(),
            capability: "image input",
        });
    }
    transport.chat(&request.with_image(image))
}

/// Thread-safe monotone usage counters.
#[derive(Debug, Default)]
pub(crate) struct UsageMeter {
    prompt: AtomicU64,
    completion: AtomicU64,
    requests: AtomicU64,
}

impl UsageMeter {
    pub(crate) fn add(&self, u: &Usage) {
        self.prompt.fetch_add(u.prompt_tokens, Ordering::Relaxed);
        self.completion.fetch_add(u.completion_tokens, Ordering::Relaxed);
        self.requests.fetch_add(u.requests.max(1), Ordering::Relaxed);
    }

    pub(crate) fn get(&self) -> Usage {
        Usage {
            prompt_tokens: self.prompt.load(Ordering::Relaxed),
            completion_tokens: self.completion.load(Ordering::Relaxed),
            requests: self.requests.load(Ordering::Relaxed),
        }
    }
}

/// Rough token estimate for transports without server-side accounting.
pub(crate) fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Settings from which a registered transport factory builds a transport.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransportSettings {
    /// Registered transport name, e.g. `live` or `scripted`.
    pub kind: String,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub embedding_model: Option<String>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
    #[serde(default)]
    pub max_concurrency: Option<usize>,
    /// Fixture file or directory for `scripted`.
    #[serde(default)]
    pub fixture: Option<std::path::PathBuf>,
}

pub type TransportFactory = fn(&TransportSettings) -> Result<Arc<dyn Transport>, LlmError>;

/// Name-indexed table of transport constructors.
#[derive(Clone)]
pub struct TransportRegistry {
    entries: Vec<(&'static str, TransportFactory)>,
}

impl TransportRegistry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    /// `live` and `scripted`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("live", |s| Ok(Arc::new(LiveTransport::new(LiveConfig::from_settings(s)?)?)));
        r.register("scripted", |s| {
            let path = s
                .fixture
                .as_ref()
                .ok_or_else(|| LlmError::Fixture("scripted transport needs a fixture path".into()))?;
            Ok(Arc::new(ScriptedTransport::from_path(path)?))
        });
        r
    }

    pub fn register(&mut self, name: &'static str, factory: TransportFactory) {
        self.entries.retain(|(n, _)| !n.eq_ignore_ascii_case(name));
        self.entries.push((name, factory));
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn build(&self, settings: &TransportSettings) -> Result<Arc<dyn Transport>, LlmError> {
        let (_, f) = self
            .entries
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(&settings.kind))
            .ok_or_else(|| {
                LlmError::Fixture(format!(
                    "unknown transport {:?}; registered: {}",
                    settings.kind,
                    self.names().join(", ")
                ))
            })?;
        f(settings)
    }
}

impl Default for TransportRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_presets_carry_temperatures() {
        assert_eq!(ChatRequest::generation("p", "a").temperature, 0.7);
        assert_eq!(ChatRequest::summary("p", "a").temperature, 1.0);
        assert_eq!(ChatRequest::summary("p", "a").max_tokens, SUMMARY_MAX_TOKENS);
    }

    #[test]
    fn validation() {
        let mut r = ChatRequest::generation("p", "id7");
        assert!(r.validate().is_ok());
        r.temperature = 2.5;
        let e = r.validate().unwrap_err();
        assert_eq!(e.correlation_id(), Some("id7"));
        r.temperature = 1.0;
        r.messages.clear();
        assert!(r.validate().is_err());
    }

    #[test]
    fn image_payload_serializes_as_base64() {
        let img = ImagePayload::png(vec![1, 2, 3]);
        let json = serde_json::to_string(&img).unwrap();
        assert!(json.contains("AQID"));
        assert_eq!(serde_json::from_str::<ImagePayload>(&json).unwrap(), img);
        assert_eq!(img.data_url(), "data:image/png;base64,AQID");
    }

    #[test]
    fn registry_rejects_unknown_kind() {
        let r = TransportRegistry::builtin();
        assert_eq!(r.names(), ["live", "scripted"]);
        let s = TransportSettings {
            kind: "carrier-pigeon".into(),
            ..Default::default()
        };
        assert!(r.build(&s).is_err());
    }
}
