use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use super::{
    ChatRequest, ChatResponse, Fixture, FixtureResponse, LlmError, Transport, Usage,
};

/// Forwards to an inner transport and captures every reply, keyed by
/// correlation id, as a [`Fixture`] that [`super::ScriptedTransport`] replays.
pub struct RecordingTransport {
    inner: Arc<dyn Transport>,
    responses: Mutex<BTreeMap<String, FixtureResponse>>,
    embeddings: Mutex<BTreeMap<String, Vec<f64>>>,
}

impl RecordingTransport {
    pub fn new(inner: Arc<dyn Transport>) -> Self {
        Self {
            inner,
            responses: Mutex::new(BTreeMap::new()),
            embeddings: Mutex::new(BTreeMap::new()),
        }
    }

    /// Captured replies so far. Failures are recorded as `fail` entries.
    pub fn fixture(&self) -> Fixture {
        Fixture {
            version: super::scripted::FIXTURE_VERSION,
            multimodal: self.inner.supports_images(),
            embedding_model: Some(self.inner.embedding_model()),
            responses: self.responses.lock().expect("poisoned").values().cloned().collect(),
            sequence: Vec::new(),
            embeddings: self.embeddings.lock().expect("poisoned").clone(),
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.fixture().to_json())
    }
}

impl Transport for RecordingTransport {
    fn name(&self) -> &str {
        "recording"
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let result = self.inner.chat(request);
        let entry = match &result {
            Ok(r) => FixtureResponse {
                key: request.correlation_id.clone(),
                text: r.text.clone(),
                fail: None,
            },
            Err(e) => FixtureResponse {
                key: request.correlation_id.clone(),
                text: String::new(),
                fail: Some(e.to_string()),
            },
        };
        self.responses
            .lock()
            .expect("poisoned")
            .insert(request.correlation_id.clone(), entry);
        result
    }

    fn supports_images(&self) -> bool {
        self.inner.supports_images()
    }

    fn embed(&self, texts: &[String], correlation_id: &str) -> Result<Vec<Vec<f64>>, LlmError> {
        let out = self.inner.embed(texts, correlation_id)?;
        let mut map = self.embeddings.lock().expect("poisoned");
        for (t, v) in texts.iter().zip(&out) {
            map.insert(t.clone(), v.clone());
        }
        Ok(out)
    }

    fn embedding_model(&self) -> String {
        self.inner.embedding_model()
    }

    fn max_concurrency(&self) -> usize {
        self.inner.max_concurrency()
    }

    fn usage(&self) -> Usage {
        self.inner.usage()
    }
}
