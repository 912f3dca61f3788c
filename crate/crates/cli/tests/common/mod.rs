#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::json;

pub const POOR: &str = "```toml\n[[library]]\ntype = \"polynomial\"\ndegree = 1\n[optimizer]\ntype = \"STLSQ\"\nthreshold = 0.1\n```";
pub const BASELINE: &str = "```toml\n[[library]]\ntype = \"polynomial\"\ndegree = 2\n[optimizer]\ntype = \"STLSQ\"\nthreshold = 0.1\n```";

pub fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Writes a scripted fixture of `(key, text)` replies; a `None` text fails.
pub fn write_fixture(path: &Path, replies: &[(&str, Option<&str>)]) -> PathBuf {
    let responses: Vec<_> = replies
        .iter()
        .map(|(k, t)| match t {
            Some(t) => json!({ "key": k, "text": t }),
            None => json!({ "key": k, "fail": "connection reset" }),
        })
        .collect();
    std::fs::write(path, json!({ "version": 1, "responses": responses }).to_string()).unwrap();
    path.to_path_buf()
}

pub fn sindy(args: &[&str]) -> i32 {
    let mut v = vec!["sindy"];
    v.extend_from_slice(args);
    sindy_cli::run(v)
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
