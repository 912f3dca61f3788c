//! TOML configuration file. Every key is optional; command-line flags win.
//!
//! ```toml
//! [run]
//! samples = 30
//! iterations = 10
//! threshold = 0.99
//! attempts_in_prompt = 5
//! ablation = "text+data"
//! rag_n = 5
//! choose_optimizer = true
//! seed = 0
//! feedback_wait_secs = 0
//!
//! [transport]
//! kind = "live"            # or "scripted"
//! base_url = "http://localhost:8000/v1"
//! model = "qwen2-72b"
//! embedding_model = "bge-large"
//! timeout_secs = 120
//! max_concurrency = 8
//! fixture = "fixtures/lorenz"
//!
//! [paths]
//! runs_dir = "runs"
//! rag_store = "store.json"
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub samples: Option<usize>,
    pub iterations: Option<usize>,
    pub threshold: Option<f64>,
    pub attempts_in_prompt: Option<usize>,
    pub ablation: Option<String>,
    pub rag_n: Option<usize>,
    pub choose_optimizer: Option<bool>,
    pub seed: Option<u64>,
    pub feedback_wait_secs: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportSection {
    pub kind: Option<String>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub embedding_model: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_concurrency: Option<usize>,
    pub fixture: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub runs_dir: Option<PathBuf>,
    pub rag_store: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub run: RunSection,
    pub transport: TransportSection,
    pub paths: PathsSection,
}

impl FileConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).context("invalid config file")
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let doc = include_str!("config.rs");
        let example: String = doc
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start_matches(' '))
            .collect::<Vec<_>>()
            .join("\n");
        let c = FileConfig::parse(&example).unwrap();
        assert_eq!(c.run.samples, Some(30));
        assert_eq!(c.transport.kind.as_deref(), Some("live"));
        assert_eq!(c.paths.runs_dir, Some(PathBuf::from("runs")));
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(FileConfig::parse("[run]\nsampels = 3\n").is_err());
        assert_eq!(FileConfig::parse("").unwrap(), FileConfig::default());
    }
}
