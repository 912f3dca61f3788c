//! Candidate configuration language.
//!
//! A language model answers with fenced blocks; each block is a TOML
//! document selecting a feature library and an optimizer:
//!
//! ```toml
//! schema_version = 1
//!
//! [[library]]
//! type = "polynomial"
//! degree = 2
//!
//! [optimizer]
//! type = "STLSQ"
//! threshold = 0.1
//! ```
//!
//! The full grammar lives in `docs/candidate-grammar.md`.

mod parse;

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureLibrarySpec, LibraryPart};
use crate::sparse_opt::{OptimizerSpec, Sr3, Stlsq};

pub use parse::{parse_candidate, parse_candidate_bytes};

pub const SCHEMA_VERSION: u32 = 1;

/// A validated proposal: what to fit and how.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub library: FeatureLibrarySpec,
    pub optimizer: OptimizerSpec,
    /// The block this spec was parsed from.
    pub raw_text: String,
    pub schema_version: u32,
}

/// Equality ignores `raw_text`.
impl PartialEq for CandidateSpec {
    fn eq(&self, other: &Self) -> bool {
        self.library == other.library
            && self.optimizer == other.optimizer
            && self.schema_version == other.schema_version
    }
}

impl CandidateSpec {
    pub fn new(library: FeatureLibrarySpec, optimizer: OptimizerSpec) -> Self {
        let mut spec = Self {
            library,
            optimizer,
            raw_text: String::new(),
            schema_version: SCHEMA_VERSION,
        };
        spec.raw_text = spec.serialize();
        spec
    }

    /// Polynomial degree 2 with STLSQ at threshold 0.1.
    pub fn baseline() -> Self {
        Self::new(FeatureLibrarySpec::polynomial(2), OptimizerSpec::stlsq(0.1))
    }

    /// Canonical block text; parses back to an equal spec.
    pub fn serialize(&self) -> String {
        let mut out = format!("schema_version = {}\n", self.schema_version);
        for part in self.library.parts() {
            out.push_str("\n[[library]]\n");
            match part {
                LibraryPart::Polynomial {
                    degree,
                    include_interaction,
                    include_bias,
                } => {
                    out.push_str("type = \"polynomial\"\n");
                    out.push_str(&format!("degree = {degree}\n"));
                    out.push_str(&format!("include_interaction = {include_interaction}\n"));
                    out.push_str(&format!("include_bias = {include_bias}\n"));
                }
                LibraryPart::Fourier {
                    n_frequencies,
                    include_sin,
                    include_cos,
                } => {
                    out.push_str("type = \"fourier\"\n");
                    out.push_str(&format!("n_frequencies = {n_frequencies}\n"));
                    out.push_str(&format!("include_sin = {include_sin}\n"));
                    out.push_str(&format!("include_cos = {include_cos}\n"));
                }
                LibraryPart::Custom { terms } => {
                    out.push_str("type = \"custom\"\n");
                    let quoted: Vec<String> = terms
                        .iter()
                        .map(|t| toml::Value::String(t.source.clone()).to_string())
                        .collect();
                    out.push_str(&format!("terms = [{}]\n", quoted.join(", ")));
                }
            }
        }
        let o = &self.optimizer;
        out.push_str("\n[optimizer]\n");
        out.push_str(&format!("type = {}\n", toml::Value::String(o.kind.clone())));
        let float = |v: f64| format!("{v:?}");
        if o.kind == Stlsq::NAME || o.kind == Sr3::NAME {
            out.push_str(&format!("threshold = {}\n", float(o.threshold)));
            out.push_str(&format!("max_iter = {}\n", o.max_iter));
        }
        if o.kind == Stlsq::NAME {
            out.push_str(&format!("alpha = {}\n", float(o.ridge_alpha)));
        }
        if o.kind == Sr3::NAME {
            out.push_str(&format!("nu = {}\n", float(o.nu)));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// A located parse or validation message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    pub severity: Severity,
    pub message: String,
    /// 1-based.
    pub line: Option<usize>,
    /// 1-based, in characters.
    pub column: Option<usize>,
    /// The offending source line.
    pub snippet: Option<String>,
}

impl ParseDiagnostic {
    pub fn error(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            message: message.into(),
            line: None,
            column: None,
            snippet: None,
        }
    }

    pub fn warning(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            ..Self::error(message)
        }
    }

    /// Attaches the position of byte offset `at` in `source`.
    pub fn at(mut self, source: &str, at: usize) -> Self {
        let at = floor_char_boundary(source, at.min(source.len()));
        let line_start = source[..at].rfind('\n').map_or(0, |i| i + 1);
        let line_end = source[at..].find('\n').map_or(source.len(), |i| at + i);
        self.line = Some(source[..line_start].matches('\n').count() + 1);
        self.column = Some(source[line_start..at].chars().count() + 1);
        self.snippet = Some(source[line_start..line_end].trim_end().to_string());
        self
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

fn floor_char_boundary(s: &str, mut i: usize) -> usize {
    while !s.is_char_boundary(i) {
        i -= 1;
    }
    i
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{sev} at line {l}, column {c}: {}", self.message)?,
            _ => write!(f, "{sev}: {}", self.message)?,
        }
        if let Some(s) = &self.snippet {
            write!(f, "\n    | {s}")?;
        }
        Ok(())
    }
}

/// A successful parse and any warnings it raised.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCandidate {
    pub spec: CandidateSpec,
    pub warnings: Vec<ParseDiagnostic>,
}

static FENCE: LazyLock<Regex> = LazyLock::new(|| {
    // Opening fence, optional spaces and language tag, rest of line; body up
    // to the closing fence or end of input.
    Regex::new(r"(?s)```[ \t]*[A-Za-z0-9_+.\-]*[^\n]*\n(.*?)(?:```|\z)").expect("fence regex")
});

/// Contents of every triple-backtick block, in order.
pub fn extract_blocks(response: &str) -> Vec<String> {
    let text = response.replace("\r\n", "\n");
    FENCE
        .captures_iter(&text)
        .map(|c| c[1].to_string())
        .filter(|b| !b.trim().is_empty())
        .collect()
}

/// Diagnostics of a response none of whose blocks parsed.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateFailure {
    pub blocks: usize,
    pub diagnostics: Vec<ParseDiagnostic>,
}

impl fmt::Display for CandidateFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.diagnostics.iter().map(|d| d.to_string()).collect();
        f.write_str(&lines.join("\n"))
    }
}

/// Parses blocks in order and returns the first valid one.
pub fn first_valid_candidate(response: &str, n: usize) -> Result<ParsedCandidate, CandidateFailure> {
    let blocks = extract_blocks(response);
    if blocks.is_empty() {
        return Err(CandidateFailure {
            blocks: 0,
            diagnostics: vec![ParseDiagnostic::error("response contains no fenced ``` block")],
        });
    }
    let mut diagnostics = Vec::new();
    for (k, block) in blocks.iter().enumerate() {
        match parse_candidate(block, n) {
            Ok(c) => return Ok(c),
            Err(ds) => diagnostics.extend(ds.into_iter().map(|mut d| {
                d.message = format!("block {}: {}", k + 1, d.message);
                d
            })),
        }
    }
    Err(CandidateFailure {
        blocks: blocks.len(),
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_blocks_in_order() {
        let r = "intro\n```toml\na = 1\n```\nmiddle\n```\nb = 2\n```\n";
        assert_eq!(extract_blocks(r), vec!["a = 1\n", "b = 2\n"]);
    }

    #[test]
    fn tolerates_space_before_language_tag() {
        let r = "``` python\nx = 1\n```";
        assert_eq!(extract_blocks(r), vec!["x = 1\n"]);
    }

    #[test]
    fn crlf_matches_lf() {
        let lf = "text\n```toml\na = 1\nb = 2\n```\n";
        assert_eq!(extract_blocks(lf), extract_blocks(&lf.replace('\n', "\r\n")));
    }

    #[test]
    fn unterminated_block_runs_to_end() {
        assert_eq!(extract_blocks("```toml\na = 1\n"), vec!["a = 1\n"]);
        assert!(extract_blocks("no fences").is_empty());
    }

    #[test]
    fn diagnostic_positions() {
        let d = ParseDiagnostic::error("x").at("ab\ncdé\nf", 5);
        assert_eq!((d.line, d.column), (Some(2), Some(3)));
        assert_eq!(d.snippet.as_deref(), Some("cdé"));
        let d = ParseDiagnostic::error("x").at("ab\ncdé\nf", 6);
        assert_eq!(d.column, Some(3));
    }

    #[test]
    fn first_valid_skips_invalid_blocks() {
        let r = "```\nnot toml [\n```\n```toml\n[[library]]\ntype=\"polynomial\"\ndegree=1\n[optimizer]\ntype=\"LeastSquares\"\n```";
        let c = first_valid_candidate(r, 2).unwrap();
        assert_eq!(c.spec.optimizer.kind, "LeastSquares");
        let e = first_valid_candidate("```\nbad\n```\n```\n[[library]]\n```", 2).unwrap_err();
        assert_eq!(e.blocks, 2);
        assert!(e.diagnostics.iter().any(|d| d.message.starts_with("block 1:")));
        assert!(e.diagnostics.iter().any(|d| d.message.starts_with("block 2:")));
        assert_eq!(first_valid_candidate("plain", 1).unwrap_err().blocks, 0);
    }

    #[test]
    fn baseline_serializes_and_round_trips() {
        let b = CandidateSpec::baseline();
        let back = parse_candidate(&b.serialize(), 3).unwrap();
        assert!(back.warnings.is_empty(), "{:?}", back.warnings);
        assert_eq!(back.spec, b);
    }
}
