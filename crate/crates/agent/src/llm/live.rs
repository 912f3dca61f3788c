use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{
    approx_tokens, ChatRequest, ChatResponse, LlmError, Message, Transport, TransportSettings, Usage,
    UsageMeter, DEFAULT_MAX_CONCURRENCY,
};

pub const BASE_URL_ENV: &str = "SINDY_LLM_BASE_URL";
pub const API_KEY_ENV: &str = "SINDY_LLM_API_KEY";
pub const MODEL_ENV: &str = "SINDY_LLM_MODEL";
pub const EMBEDDING_MODEL_ENV: &str = "SINDY_LLM_EMBEDDING_MODEL";

/// Retries after transport errors, 429 and 5xx, doubling the delay each time.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_delay: Duration,
}

impl Default for RetryPolicy {
    /// Three retries after 1 s, 2 s and 4 s.
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.initial_delay * 2u32.saturating_pow(retry)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    /// Prefix of `/chat/completions`, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub embedding_model: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub max_concurrency: usize,
    pub supports_images: bool,
}

impl LiveConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            embedding_model: String::new(),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            max_concurrency: DEFAULT_MAX_CONCURRENCY,
            supports_images: true,
        }
    }

    /// Explicit settings first, then `SINDY_LLM_*` variables.
    pub fn from_settings(s: &TransportSettings) -> Result<Self, LlmError> {
        let env = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let base_url = s
            .base_url
            .clone()
            .or_else(|| env(BASE_URL_ENV))
            .ok_or_else(|| LlmError::Fixture(format!("live transport needs a base URL (set {BASE_URL_ENV})")))?;
        let model = s.model.clone().or_else(|| env(MODEL_ENV)).unwrap_or_default();
        let mut c = Self::new(base_url, model);
        c.api_key = env(API_KEY_ENV);
        c.embedding_model = s
            .embedding_model
            .clone()
            .or_else(|| env(EMBEDDING_MODEL_ENV))
            .unwrap_or_default();
        if let Some(t) = s.timeout_secs {
            c.timeout = Duration::from_secs(t.max(1));
        }
        if let Some(m) = s.max_concurrency {
            c.max_concurrency = m.max(1);
        }
        Ok(c)
    }
}

pub struct LiveTransport {
    config: LiveConfig,
    client: Client,
    meter: UsageMeter,
}

enum Failure {
    Retryable(LlmError),
    Fatal(LlmError),
}

fn message_json(m: &Message) -> Value {
    match &m.image {
        None => json!({ "role": m.role, "content": m.content }),
        Some(img) => json!({
            "role": m.role,
            "content": [
                { "type": "text", "text": m.content },
                { "type": "image_url", "image_url": { "url": img.data_url() } },
            ],
        }),
    }
}

impl LiveTransport {
    pub fn new(config: LiveConfig) -> Result<Self, LlmError> {
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Fixture(format!("http client: {e}")))?;
        Ok(Self {
            config,
            client,
            meter: UsageMeter::default(),
        })
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.base_url.trim_end_matches('/'))
    }

    fn post_once(&self, path: &str, body: &Value, cid: &str) -> Result<Value, Failure> {
        let mut req = self.client.post(self.url(path)).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            let cid = cid.to_string();
            Failure::Retryable(if e.is_timeout() {
                LlmError::Timeout { correlation_id: cid }
            } else {
                LlmError::Network {
                    correlation_id: cid,
                    message: e.to_string(),
                }
            })
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            Failure::Retryable(LlmError::Network {
                correlation_id: cid.into(),
                message: e.to_string(),
            })
        })?;
        if !status.is_success() {
            let err = LlmError::Http {
                correlation_id: cid.into(),
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            };
            return Err(if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
                Failure::Retryable(err)
            } else {
                Failure::Fatal(err)
            });
        }
        serde_json::from_str(&text).map_err(|e| {
            Failure::Fatal(LlmError::Decode {
                correlation_id: cid.into(),
                message: e.to_string(),
            })
        })
    }

    fn post(&self, path: &str, body: &Value, cid: &str) -> Result<Value, LlmError> {
        let mut retry = 0;
        loop {
            match self.post_once(path, body, cid) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(e)) => {
                    if retry >= self.config.retry.max_retries {
                        return Err(e);
                    }
                    thread::sleep(self.config.retry.delay(retry));
                    retry += 1;
                }
            }
        }
    }
}

fn decode_err(cid: &str, message: &str) -> LlmError {
    LlmError::Decode {
        correlation_id: cid.into(),
        message: message.into(),
    }
}

impl Transport for LiveTransport {
    fn name(&self) -> &str {
        "live"
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let cid = &request.correlation_id;
        let model = if request.model_id.is_empty() {
            &self.config.model
        } else {
            &request.model_id
        };
        let mut body = json!({
            "model": model,
            "messages": request.messages.iter().map(message_json).collect::<Vec<_>>(),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let v = self.post("chat/completions", &body, cid)?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| decode_err(cid, "missing choices[0].message.content"))?
            .to_string();
        let usage = Usage {
            prompt_tokens: v["usage"]["prompt_tokens"]
                .as_u64()
                .unwrap_or_else(|| approx_tokens(&request.prompt_text())),
            completion_tokens: v["usage"]["completion_tokens"]
                .as_u64()
                .unwrap_or_else(|| approx_tokens(&text)),
            requests: 1,
        };
        self.meter.add(&usage);
        Ok(ChatResponse { text, usage })
    }

    fn supports_images(&self) -> bool {
        self.config.supports_images
    }

    fn embed(&self, texts: &[String], correlation_id: &str) -> Result<Vec<Vec<f64>>, LlmError> {
        if texts.is_empty() {
            return Err(LlmError::InvalidRequest {
                correlation_id: correlation_id.into(),
                reason: "no texts to embed".into(),
            });
        }
        let body = json!({ "model": self.config.embedding_model, "input": texts });
        let v = self.post("embeddings", &body, correlation_id)?;
        let data = v["data"]
            .as_array()
            .ok_or_else(|| decode_err(correlation_id, "missing data array"))?;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item["index"].as_u64().map_or(pos, |i| i as usize);
            let emb = item["embedding"]
                .as_array()
                .ok_or_else(|| decode_err(correlation_id, "missing embedding"))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| decode_err(correlation_id, "non-numeric embedding")))
                .collect::<Result<Vec<f64>, _>>()?;
            rows.push((index, emb));
        }
        rows.sort_by_key(|r| r.0);
        if rows.len() != texts.len() {
            return Err(decode_err(correlation_id, "embedding count differs from input count"));
        }
        let dim = rows[0].1.len();
        if dim == 0 || rows.iter().any(|r| r.1.len() != dim) {
            return Err(decode_err(correlation_id, "embeddings have inconsistent lengths"));
        }
        self.meter.add(&Usage {
            prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: 0,
            requests: 1,
        });
        Ok(rows.into_iter().map(|r| r.1).collect())
    }

    fn embedding_model(&self) -> String {
        self.config.embedding_model.clone()
    }

    fn max_concurrency(&self) -> usize {
        self.config.max_concurrency
    }

    fn usage(&self) -> super::Usage {
        self.meter.get()
    }
}
