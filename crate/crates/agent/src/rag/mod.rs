//! Retrieval of example description/candidate pairs by embedding similarity.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{LlmError, Transport};

pub const STORE_FORMAT_VERSION: u32 = 1;
pub const SEED_EXAMPLES: &str = include_str!("../../seed/examples.toml");

#[derive(Debug, Error)]
pub enum RagError {
    #[error("cosine similarity of a zero-norm vector")]
    ZeroNorm,
    #[error("vector dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedder {found} does not match store embedder {expected}")]
    FingerprintMismatch { expected: Fingerprint, found: Fingerprint },
    #[error("embedding: {0}")]
    Embedding(#[from] LlmError),
    #[error("store format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Identity of the embedding space a store was built in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub model_id: String,
    pub dimension: usize,
}

impl std::fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.model_id, self.dimension)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub id: String,
    /// Registry system the pair describes, used for leave-one-out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub description: String,
    pub config: String,
    pub embedding: Vec<f64>,
}

/// A retrieved pair and its similarity to the query.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved<'a> {
    pub pair: &'a ExamplePair,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleStore {
    pub format_version: u32,
    pub fingerprint: Fingerprint,
    pairs: Vec<ExamplePair>,
}

/// Raw seed entry before embedding.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SeedExample {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub system: Option<String>,
    pub description: String,
    pub config: String,
}

#[derive(Deserialize)]
struct SeedFile {
    example: Vec<SeedExample>,
}

pub fn parse_seed(text: &str) -> Result<Vec<SeedExample>, RagError> {
    toml::from_str::<SeedFile>(text)
        .map(|f| f.example)
        .map_err(|e| RagError::Format(e.to_string()))
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `a . b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, RagError> {
    if a.len() != b.len() {
        return Err(RagError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(RagError::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn fingerprint_of(transport: &dyn Transport, dimension: usize) -> Fingerprint {
    Fingerprint {
        model_id: transport.embedding_model(),
        dimension,
    }
}

impl ExampleStore {
    pub fn new(fingerprint: Fingerprint) -> Self {
        Self {
            format_version: STORE_FORMAT_VERSION,
            fingerprint,
            pairs: Vec::new(),
        }
    }

    /// Embeds every seed entry with `transport`.
    pub fn from_seed(seed: &[SeedExample], transport: &dyn Transport) -> Result<Self, RagError> {
        if seed.is_empty() {
            return Err(RagError::Format("seed has no examples".into()));
        }
        let texts: Vec<String> = seed.iter().map(|s| s.description.clone()).collect();
        let vectors = transport.embed(&texts, "rag/seed")?;
        let dim = vectors.first().map_or(0, Vec::len);
        let mut store = Self::new(fingerprint_of(transport, dim));
        for (s, z) in seed.iter().zip(vectors) {
            let id = s.id.clone().or_else(|| s.system.clone());
            store.push(id, s.system.clone(), s.description.clone(), s.config.clone(), z)?;
        }
        Ok(store)
    }

    pub fn pairs(&self) -> &[ExamplePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Appends a pair with a precomputed embedding and returns its id.
    pub fn push(
        &mut self,
        id: Option<String>,
        system: Option<String>,
        description: String,
        config: String,
        embedding: Vec<f64>,
    ) -> Result<String, RagError> {
        if embedding.len() != self.fingerprint.dimension {
            return Err(RagError::DimensionMismatch {
                left: embedding.len(),
                right: self.fingerprint.dimension,
            });
        }
        if !(norm(&embedding) > 0.0) || embedding.iter().any(|v| !v.is_finite()) {
            return Err(RagError::ZeroNorm);
        }
        let id = id.unwrap_or_else(|| format!("ex{}", self.pairs.len()));
        if self.pairs.iter().any(|p| p.id == id) {
            return Err(RagError::Format(format!("duplicate example id {id:?}")));
        }
        self.pairs.push(ExamplePair {
            id: id.clone(),
            system,
            description,
            config,
            embedding,
        });
        Ok(id)
    }

    /// Embeds `description` and appends the pair.
    pub fn add_example(
        &mut self,
        description: &str,
        config: &str,
        system: Option<String>,
        transport: &dyn Transport,
    ) -> Result<String, RagError> {
        let z = self.embed_query(description, transport)?;
        self.push(None, system, description.into(), config.into(), z)
    }

    fn embed_query(&self, text: &str, transport: &dyn Transport) -> Result<Vec<f64>, RagError> {
        let z = transport
            .embed(&[text.to_string()], "rag/query")?
            .pop()
            .ok_or_else(|| RagError::Format("embedder returned no vector".into()))?;
        let found = fingerprint_of(transport, z.len());
        if found != self.fingerprint {
            return Err(RagError::FingerprintMismatch {
                expected: self.fingerprint.clone(),
                found,
            });
        }
        Ok(z)
    }

    /// Top `n` pairs by similarity to `query`, descending, ties by insertion
    /// order. Pairs for which `exclude` holds are skipped.
    pub fn retrieve_embedding(
        &self,
        query: &[f64],
        n: usize,
        exclude: &dyn Fn(&ExamplePair) -> bool,
    ) -> Result<Vec<Retrieved<'_>>, RagError> {
        let mut scored = Vec::with_capacity(self.pairs.len());
        for p in self.pairs.iter().filter(|p| !exclude(p)) {
            scored.push(Retrieved { pair: p, similarity: cosine(query, &p.embedding)? });
        }
        scored.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
        scored.truncate(n);
        Ok(scored)
    }

    pub fn retrieve(
        &self,
        query: &str,
        n: usize,
        transport: &dyn Transport,
    ) -> Result<Vec<Retrieved<'_>>, RagError> {
        self.retrieve_excluding(query, n, transport, None)
    }

    /// As [`Self::retrieve`], leaving out pairs of `exclude_system`.
    pub fn retrieve_excluding(
        &self,
        query: &str,
        n: usize,
        transport: &dyn Transport,
        exclude_system: Option<&str>,
    ) -> Result<Vec<Retrieved<'_>>, RagError> {
        if self.pairs.is_empty() || n == 0 {
            return Ok(Vec::new());
        }
        let z = self.embed_query(query, transport)?;
        self.retrieve_embedding(&z, n, &|p| {
            exclude_system.is_some_and(|s| p.system.as_deref() == Some(s))
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), RagError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| RagError::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Loads a store and checks version, dimensions and norms.
    pub fn load(path: &Path) -> Result<Self, RagError> {
        let text = std::fs::read_to_string(path)?;
        let raw: Self = serde_json::from_str(&text).map_err(|e| RagError::Format(e.to_string()))?;
        if raw.format_version != STORE_FORMAT_VERSION {
            return Err(RagError::Format(format!(
                "unsupported store version {}",
                raw.format_version
            )));
        }
        let mut store = Self::new(raw.fingerprint);
        for p in raw.pairs {
            store.push(Some(p.id), p.system, p.description, p.config, p.embedding)?;
        }
        Ok(store)
    }

    /// Fails unless `transport` embeds into this store's space.
    pub fn check_embedder(&self, transport: &dyn Transport) -> Result<(), RagError> {
        self.embed_query("fingerprint probe", transport).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedTransport;
    use sindy_core::specdsl::parse_candidate;

    #[test]
    fn cosine_hand_cases() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(RagError::ZeroNorm)));
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(RagError::DimensionMismatch { .. })));
    }

    #[test]
    fn seed_configs_parse_for_their_systems() {
        let seed = parse_seed(SEED_EXAMPLES).unwrap();
        assert_eq!(seed.len(), sindy_core::dynamics::registry().len());
        for s in &seed {
            let sys = sindy_core::dynamics::find_system(s.system.as_deref().unwrap()).unwrap();
            let parsed = parse_candidate(&s.config, sys.dimension);
            assert!(parsed.is_ok(), "{:?}: {:?}", s.system, parsed.err());
        }
    }

    #[test]
    fn own_description_ranks_first_and_leave_one_out_drops_it() {
        let t = ScriptedTransport::constant("");
        let seed = parse_seed(SEED_EXAMPLES).unwrap();
        let store = ExampleStore::from_seed(&seed, &t).unwrap();
        let q = &seed[0].description;
        let top = store.retrieve(q, 3, &t).unwrap();
        assert_eq!(top[0].pair.system.as_deref(), Some("lorenz"));
        assert!((top[0].similarity - 1.0).abs() < 1e-12);
        let loo = store.retrieve_excluding(q, 20, &t, Some("lorenz")).unwrap();
        assert_eq!(loo.len(), seed.len() - 1);
        assert!(loo.iter().all(|r| r.pair.system.as_deref() != Some("lorenz")));
    }

    #[test]
    fn mismatched_embedders_are_rejected() {
        let t = ScriptedTransport::constant("");
        let mut store = ExampleStore::new(Fingerprint { model_id: "other".into(), dimension: 256 });
        assert!(matches!(
            store.add_example("x", "y", None, &t),
            Err(RagError::FingerprintMismatch { .. })
        ));
        assert!(store.push(None, None, "d".into(), "c".into(), vec![1.0; 3]).is_err());
    }

    #[test]
    fn save_load_round_trip_and_validation() {
        let t = ScriptedTransport::constant("");
        let seed = parse_seed(SEED_EXAMPLES).unwrap();
        let store = ExampleStore::from_seed(&seed, &t).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("store.json");
        store.save(&p).unwrap();
        assert_eq!(ExampleStore::load(&p).unwrap(), store);
        let bad = std::fs::read_to_string(&p).unwrap().replacen("\"format_version\": 1", "\"format_version\": 2", 1);
        std::fs::write(&p, bad).unwrap();
        assert!(ExampleStore::load(&p).is_err());
    }

    #[test]
    fn empty_store_returns_nothing() {
        let t = ScriptedTransport::constant("");
        let store = ExampleStore::new(Fingerprint { model_id: t.embedding_model(), dimension: 256 });
        assert!(store.retrieve("anything", 5, &t).unwrap().is_empty());
    }
}
