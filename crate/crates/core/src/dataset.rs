//! Benchmark records and the on-disk database layout.

use std::path::{Path, PathBuf};

use serde_json::Value as Json;
use thiserror::Error;

use crate::cotf::{Difficulty, Question};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("dataset is not a JSON list of records: {0}")]
    Format(String),
    #[error("record {index}: {reason}")]
    Record { index: usize, reason: String },
}

fn text(obj: &serde_json::Map<String, Json>, keys: &[&str]) -> Option<String> {
    keys.iter().find_map(|k| match obj.get(*k) {
        Some(Json::String(s)) => Some(s.clone()),
        Some(Json::Number(n)) => Some(n.to_string()),
        _ => None,
    })
}

/// Parses BIRD or Spider style records. `question_id` defaults to the record
/// position; `SQL`/`query`, `evidence` and `difficulty` are optional.
pub fn parse_dataset(json: &str) -> Result<Vec<Question>, DatasetError> {
    let value: Json = serde_json::from_str(json).map_err(|e| DatasetError::Format(e.to_string()))?;
    let Json::Array(items) = value else { return Err(DatasetError::Format("top level is not a list".into())) };
    items
        .iter()
        .enumerate()
        .map(|(index, item)| {
            let bad = |reason: &str| DatasetError::Record { index, reason: reason.to_string() };
            let obj = item.as_object().ok_or_else(|| bad("not an object"))?;
            let db_id = text(obj, &["db_id"]).ok_or_else(|| bad("missing db_id"))?;
            let question = text(obj, &["question"]).filter(|q| !q.trim().is_empty()).ok_or_else(|| bad("missing question"))?;
            let mut q = Question::new(text(obj, &["question_id"]).unwrap_or_else(|| index.to_string()), db_id, question);
            q.gold_sql = text(obj, &["SQL", "sql", "query"]);
            q.expert_evidence = text(obj, &["evidence"]).filter(|e| !e.is_empty());
            q.difficulty = match text(obj, &["difficulty"]).as_deref() {
                Some("simple") => Some(Difficulty::Simple),
                Some("moderate") => Some(Difficulty::Moderate),
                Some("challenging") => Some(Difficulty::Challenging),
                _ => None,
            };
            Ok(q)
        })
        .collect()
}

pub fn load_dataset(path: &Path) -> Result<Vec<Question>, DatasetError> {
    let json = std::fs::read_to_string(path)
        .map_err(|e| DatasetError::Io { path: path.to_path_buf(), reason: e.to_string() })?;
    parse_dataset(&json)
}

/// `<root>/<db_id>/<db_id>.sqlite` with an optional `database_description/`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbLayout {
    pub root: PathBuf,
}

impl DbLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DbLayout { root: root.into() }
    }

    pub fn database(&self, db_id: &str) -> PathBuf {
        self.root.join(db_id).join(format!("{db_id}.sqlite"))
    }

    pub fn descriptions(&self, db_id: &str) -> Option<PathBuf> {
        let dir = self.root.join(db_id).join("database_description");
        dir.is_dir().then_some(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bird_and_spider_records() {
        let qs = parse_dataset(
            r#"[{"question_id": 7, "db_id": "schools", "question": "How many?", "evidence": "", "SQL": "SELECT 1", "difficulty": "simple"},
                {"db_id": "pets", "question": "List pets", "query": "SELECT name FROM pets"}]"#,
        )
        .unwrap();
        assert_eq!(qs[0].question_id, "7");
        assert_eq!(qs[0].expert_evidence, None);
        assert_eq!(qs[0].difficulty, Some(Difficulty::Simple));
        assert_eq!(qs[1].question_id, "1");
        assert_eq!(qs[1].gold_sql.as_deref(), Some("SELECT name FROM pets"));
    }

    #[test]
    fn missing_db_id_is_reported() {
        assert!(matches!(parse_dataset(r#"[{"question": "x"}]"#), Err(DatasetError::Record { index: 0, .. })));
    }
}
