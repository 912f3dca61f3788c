use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    approx_tokens, hashed_embedding, ChatRequest, ChatResponse, LlmError, Transport, Usage, UsageMeter,
    HASHED_EMBEDDING_MODEL,
};

pub const FIXTURE_VERSION: u32 = 1;

/// One canned reply. `key` matches correlation ids, `*` matching any run of
/// characters; `fail` turns the reply into a network error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureResponse {
    pub key: String,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<String>,
}

/// On-disk replay script.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Fixture {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Whether image requests are accepted.
    #[serde(default = "default_true")]
    pub multimodal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_model: Option<String>,
    /// Keyed replies, consulted before `sequence`. Never consumed.
    #[serde(default)]
    pub responses: Vec<FixtureResponse>,
    /// Replies handed out in order to requests no key matches.
    #[serde(default)]
    pub sequence: Vec<String>,
    /// Exact-text embedding overrides; other texts use the hashed fallback.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub embeddings: BTreeMap<String, Vec<f64>>,
}

fn default_version() -> u32 {
    FIXTURE_VERSION
}

fn default_true() -> bool {
    true
}

impl Fixture {
    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let f: Fixture = serde_json::from_str(text).map_err(|e| LlmError::Fixture(e.to_string()))?;
        if f.version != FIXTURE_VERSION {
            return Err(LlmError::Fixture(format!("unsupported fixture version {}", f.version)));
        }
        Ok(f)
    }

    /// Loads a file, or every `*.json` file of a directory in name order.
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|e| LlmError::Fixture(format!("{}: {e}", p.display())))
        };
        if !path.is_dir() {
            return Self::from_json(&read(path)?);
        }
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut merged = Fixture {
            version: FIXTURE_VERSION,
            multimodal: true,
            ..Default::default()
        };
        for f in &files {
            let part = Self::from_json(&read(f)?)
                .map_err(|e| LlmError::Fixture(format!("{}: {e}", f.display())))?;
            merged.multimodal &= part.multimodal;
            merged.embedding_model = merged.embedding_model.or(part.embedding_model);
            merged.responses.extend(part.responses);
            merged.sequence.extend(part.sequence);
            merged.embeddings.extend(part.embeddings);
        }
        Ok(merged)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fixture serializes")
    }
}

/// `*` matches any (possibly empty) substring; everything else is literal.
pub(crate) fn glob_match(pattern: &str, text: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == text;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !text.starts_with(first) || text.len() < first.len() + last.len() || !text.ends_with(last) {
        return false;
    }
    let mut rest = &text[first.len()..text.len() - last.len()];
    for mid in &parts[1..parts.len() - 1] {
        match rest.find(mid) {
            Some(i) => rest = &rest[i + mid.len()..],
            None => return false,
        }
    }
    true
}

/// Deterministic offline transport replaying a [`Fixture`].
pub struct ScriptedTransport {
    fixture: Fixture,
    queue: Mutex<VecDeque<String>>,
    meter: UsageMeter,
}

impl ScriptedTransport {
    pub fn new(fixture: Fixture) -> Self {
        let queue = Mutex::new(fixture.sequence.iter().cloned().collect());
        Self {
            fixture,
            queue,
            meter: UsageMeter::default(),
        }
    }

    /// Every request answered with `text`.
    pub fn constant(text: impl Into<String>) -> Self {
        Self::new(Fixture {
            version: FIXTURE_VERSION,
            multimodal: true,
            responses: vec![FixtureResponse {
                key: "*".into(),
                text: text.into(),
                fail: None,
            }],
            ..Default::default()
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(Fixture::load(path)?))
    }

    pub fn fixture(&self) -> &Fixture {
        &self.fixture
    }

    fn lookup(&self, cid: &str) -> Result<String, LlmError> {
        let keyed = self
            .fixture
            .responses
            .iter()
            .find(|r| r.key == cid)
            .or_else(|| self.fixture.responses.iter().find(|r| glob_match(&r.key, cid)));
        if let Some(r) = keyed {
            return match &r.fail {
                Some(msg) => Err(LlmError::Network {
                    correlation_id: cid.into(),
                    message: msg.clone(),
                }),
                None => Ok(r.text.clone()),
            };
        }
        let mut q = self.queue.lock().expect("fixture queue poisoned");
        q.pop_front().ok_or_else(|| LlmError::Exhausted {
            correlation_id: cid.into(),
        })
    }
}

impl Transport for ScriptedTransport {
    fn name(&self) -> &str {
        "scripted"
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        if request.has_image() && !self.fixture.multimodal {
            return Err(LlmError::Capability {
                correlation_id: request.correlation_id.clone(),
                transport: self.name().into(),
                capability: "image input",
            });
        }
        let text = self.lookup(&request.correlation_id)?;
        let usage = Usage {
            prompt_tokens: approx_tokens(&request.prompt_text()),
            completion_tokens: approx_tokens(&text),
            requests: 1,
        };
        self.meter.add(&usage);
        Ok(ChatResponse { text, usage })
    }

    fn supports_images(&self) -> bool {
        self.fixture.multimodal
    }

    fn embed(&self, texts: &[String], correlation_id: &str) -> Result<Vec<Vec<f64>>, LlmError> {
        if texts.is_empty() {
            return Err(LlmError::InvalidRequest {
                correlation_id: correlation_id.into(),
                reason: "no texts to embed".into(),
            });
        }
        Ok(texts
            .iter()
            .map(|t| self.fixture.embeddings.get(t).cloned().unwrap_or_else(|| hashed_embedding(t)))
            .collect())
    }

    fn embedding_model(&self) -> String {
        self.fixture
            .embedding_model
            .clone()
            .unwrap_or_else(|| HASHED_EMBEDDING_MODEL.to_string())
    }

    /// Sequential, so queue order is reproducible.
    fn max_concurrency(&self) -> usize {
        1
    }

    fn usage(&self) -> Usage {
        self.meter.get()
    }
}
