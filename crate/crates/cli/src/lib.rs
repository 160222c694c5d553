//! Commands behind the `evidencer` binary: batch runs, evaluation and trace
//! statistics. Every command returns a serializable summary that `main`
//! prints both as text and as JSON.

pub mod evaluate;
pub mod run;
pub mod stats;

use std::path::Path;

use anyhow::Context;
use evidencer::canonical::to_canonical_bytes;
use serde::Serialize;

/// Writes `value` as canonical JSON, creating parent directories.
pub fn write_canonical<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let value = serde_json::to_value(value)?;
    std::fs::write(path, to_canonical_bytes(&value)).with_context(|| format!("writing {}", path.display()))
}

/// Question ids become file names; anything outside `[A-Za-z0-9._-]` is replaced.
pub fn file_stem(question_id: &str) -> String {
    let stem: String =
        question_id.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' }).collect();
    if stem.is_empty() || stem.starts_with('.') {
        format!("q{stem}")
    } else {
        stem
    }
}
