//! `trace-stats`: tool-call distribution and turn counts over saved traces.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use evidencer::cotf::{CotfDocument, FeedbackKind, ToolKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceStats {
    pub traces: usize,
    pub clauses: usize,
    pub turns: usize,
    pub mean_turns_per_clause: f64,
    pub max_turns_per_clause: usize,
    /// Calls per tool name, `none` included; every registered tool is listed.
    pub tool_calls: BTreeMap<String, usize>,
    pub feedback: BTreeMap<String, usize>,
    pub aborted_clauses: usize,
    pub verified_linkings: usize,
    pub warnings: Vec<String>,
}

impl TraceStats {
    fn empty() -> Self {
        let mut s = TraceStats::default();
        for kind in ToolKind::ALL {
            s.tool_calls.insert(kind.name().to_string(), 0);
        }
        for kind in ["standard", "corrective", "guiding"] {
            s.feedback.insert(kind.to_string(), 0);
        }
        s
    }

    fn add(&mut self, doc: &CotfDocument) {
        self.traces += 1;
        self.clauses += doc.clauses.len();
        self.aborted_clauses += doc.aborted.len();
        self.verified_linkings += doc.verified.len();
        for turns in &doc.turns {
            self.max_turns_per_clause = self.max_turns_per_clause.max(turns.len());
        }
        for (_, turn) in doc.iter_turns() {
            self.turns += 1;
            *self.tool_calls.entry(turn.tool_call.tool.clone()).or_default() += 1;
            let kind = match turn.feedback.kind {
                FeedbackKind::Standard => "standard",
                FeedbackKind::Corrective => "corrective",
                FeedbackKind::Guiding => "guiding",
            };
            *self.feedback.entry(kind.to_string()).or_default() += 1;
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "traces {}  clauses {}  turns {}  mean turns/clause {:.2}  max {}\n",
            self.traces, self.clauses, self.turns, self.mean_turns_per_clause, self.max_turns_per_clause
        );
        out.push_str("tool calls:\n");
        for (tool, n) in &self.tool_calls {
            out.push_str(&format!("  {tool:<14} {n:>6}\n"));
        }
        out.push_str("feedback:\n");
        for (kind, n) in &self.feedback {
            out.push_str(&format!("  {kind:<14} {n:>6}\n"));
        }
        out.push_str(&format!("aborted clauses {}  verified linkings {}\n", self.aborted_clauses, self.verified_linkings));
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

/// Reads every `*.json` trace in `dir`, or in `dir/traces` when that exists.
/// Unreadable or invalid traces are skipped with a warning.
pub fn cmd_trace_stats(dir: &Path) -> anyhow::Result<TraceStats> {
    let nested = dir.join("traces");
    let dir = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut stats = TraceStats::empty();
    for path in paths {
        let loaded = std::fs::read(&path)
            .map_err(|e| e.to_string())
            .and_then(|b| CotfDocument::from_json(&b).map_err(|e| e.to_string()));
        match loaded {
            Ok(doc) => stats.add(&doc),
            Err(e) => stats.warnings.push(format!("skipped {}: {e}", path.display())),
        }
    }
    if stats.clauses > 0 {
        stats.mean_turns_per_clause = stats.turns as f64 / stats.clauses as f64;
    }
    Ok(stats)
}
