//! Facts: the tables, columns and values a document's standard feedbacks
//! actually returned. Linkings and evidence are checked against these.

use std::collections::BTreeSet;

use serde_json::Value as Json;

use crate::cotf::{CotfDocument, FeedbackKind, ToolKind, Turn, VerifiedLinking};
use crate::db::SchemaCatalog;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FactSet {
    /// Lowercased table names.
    pub tables: BTreeSet<String>,
    /// Lowercased `(table, column)` pairs.
    pub columns: BTreeSet<(String, String)>,
    /// Exact stored values, stringified.
    pub literals: BTreeSet<String>,
    /// Description text returned by metadata probes.
    pub texts: Vec<String>,
}

pub fn scalar_text(v: &Json) -> Option<String> {
    match v {
        Json::String(s) => Some(s.clone()),
        Json::Number(n) => Some(n.to_string()),
        Json::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

impl FactSet {
    fn add_table(&mut self, t: &str) {
        self.tables.insert(t.to_lowercase());
    }

    fn add_column(&mut self, t: &str, c: &str) {
        self.add_table(t);
        self.columns.insert((t.to_lowercase(), c.to_lowercase()));
    }

    pub fn extend(&mut self, other: FactSet) {
        self.tables.extend(other.tables);
        self.columns.extend(other.columns);
        self.literals.extend(other.literals);
        self.texts.extend(other.texts);
    }

    pub fn has_table(&self, t: &str) -> bool {
        self.tables.contains(&t.to_lowercase())
    }

    pub fn has_column(&self, table: Option<&str>, column: &str) -> bool {
        let c = column.to_lowercase();
        match table {
            Some(t) => self.columns.contains(&(t.to_lowercase(), c)),
            None => self.columns.iter().any(|(_, col)| *col == c),
        }
    }

    /// Exact match against stored values, or a whole-word occurrence in
    /// returned description text.
    pub fn has_literal(&self, lit: &str) -> bool {
        if self.literals.contains(lit) {
            return true;
        }
        !lit.trim().is_empty() && self.texts.iter().any(|t| contains_word(t, lit))
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty() && self.columns.is_empty() && self.literals.is_empty() && self.texts.is_empty()
    }

    /// Every table and column of the catalog, without values.
    pub fn from_catalog(catalog: &SchemaCatalog) -> FactSet {
        let mut f = FactSet::default();
        for (t, c) in catalog.all_columns() {
            f.add_column(&t.name, &c.name);
        }
        for t in &catalog.tables {
            f.add_table(&t.name);
        }
        f
    }
}

fn contains_word(haystack: &str, needle: &str) -> bool {
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    haystack.match_indices(needle).any(|(i, _)| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + needle.len()..].chars().next();
        !before.is_some_and(is_word) && !after.is_some_and(is_word)
    })
}

fn str_field<'a>(v: &'a Json, key: &str) -> Option<&'a str> {
    v.get(key).and_then(Json::as_str)
}

/// Facts contributed by one turn; empty unless its feedback is standard.
pub fn turn_facts(turn: &Turn) -> FactSet {
    let mut f = FactSet::default();
    let (FeedbackKind::Standard, Some(result)) = (turn.feedback.kind, turn.feedback.result.as_ref()) else {
        return f;
    };
    let Some(kind) = turn.tool_call.kind() else { return f };
    let table = str_field(result, "table");
    let column = str_field(result, "column");
    if let Some(t) = table {
        f.add_table(t);
        if let Some(c) = column {
            f.add_column(t, c);
        }
    }
    let items = |key: &str| result.get(key).and_then(Json::as_array).cloned().unwrap_or_default();
    match kind {
        ToolKind::ValueIn => {
            if result.get("exists").and_then(Json::as_bool) == Some(true) {
                f.literals.extend(result.get("value").and_then(scalar_text));
            }
        }
        ToolKind::SimValueIn => {
            f.literals.extend(items("candidates").iter().filter_map(|c| c.get("value")).filter_map(scalar_text));
        }
        ToolKind::UniqValue => {
            f.literals.extend(items("samples").iter().filter_map(scalar_text));
        }
        ToolKind::Head | ToolKind::Random => {
            if let Some(t) = table {
                for c in items("columns").iter().filter_map(Json::as_str) {
                    f.add_column(t, c);
                }
            }
            for row in items("rows") {
                f.literals.extend(row.as_array().into_iter().flatten().filter_map(scalar_text));
            }
        }
        ToolKind::Info => {
            for meta in items("columns") {
                if let (Some(t), Some(c)) = (table, str_field(&meta, "column")) {
                    f.add_column(t, c);
                }
                for key in ["description", "value_description"] {
                    f.texts.extend(str_field(&meta, key).map(str::to_string));
                }
            }
        }
        ToolKind::SimColumns => {
            for item in items("columns") {
                if let (Some(t), Some(c)) = (str_field(&item, "table"), str_field(&item, "column")) {
                    f.add_column(t, c);
                }
            }
        }
        ToolKind::IfNull | ToolKind::None => {}
    }
    f
}

pub fn document_facts(doc: &CotfDocument) -> FactSet {
    let mut f = FactSet::default();
    for (_, turn) in doc.iter_turns() {
        f.extend(turn_facts(turn));
    }
    f
}

/// Whether every identifier and literal of `linking` is backed by `facts`.
pub fn linking_supported(facts: &FactSet, linking: &VerifiedLinking) -> bool {
    let table_ok = linking.table.as_deref().is_none_or(|t| facts.has_table(t));
    let column_ok = linking.column.as_deref().is_none_or(|c| facts.has_column(linking.table.as_deref(), c));
    let literal_ok = linking.literal.as_deref().is_none_or(|l| facts.has_literal(l));
    table_ok && column_ok && literal_ok
}
