//! The Chain-of-Thoughts-and-Facts workspace.
//!
//! A [`CotfDocument`] holds one question, its clause partition, and for every
//! clause the ordered list of turns (thought, tool call, feedback). It is the
//! single record of a lookup run and is persisted as a canonical JSON trace.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::canonical::to_canonical_bytes;
use crate::tokenize::tokenize;

pub const TRACE_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MAX_TURNS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum CotfError {
    #[error("clause index {index} out of bounds ({len} clauses)")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("clause {0} already terminated by `none`")]
    ClauseTerminated(usize),
    #[error("clause {clause} reached the turn budget of {max_turns}")]
    TurnBudgetExceeded { clause: usize, max_turns: usize },
    #[error("invalid clause partition: {0}")]
    InvalidPartition(String),
    #[error("trace schema violation: {0}")]
    SchemaViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Simple,
    Moderate,
    Challenging,
}

impl Difficulty {
    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Simple => "simple",
            Difficulty::Moderate => "moderate",
            Difficulty::Challenging => "challenging",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub db_id: String,
    pub text: String,
    #[serde(default)]
    pub gold_sql: Option<String>,
    #[serde(default)]
    pub expert_evidence: Option<String>,
    #[serde(default)]
    pub difficulty: Option<Difficulty>,
}

impl Question {
    pub fn new(question_id: impl Into<String>, db_id: impl Into<String>, text: impl Into<String>) -> Self {
        Question {
            question_id: question_id.into(),
            db_id: db_id.into(),
            text: text.into(),
            gold_sql: None,
            expert_evidence: None,
            difficulty: None,
        }
    }
}

/// Half-open token interval `[start, end)` into the question's token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub index: usize,
    pub text: String,
    pub token_span: TokenSpan,
}

/// Checks that `clauses` form an ordered, gap-free partition of the question tokens
/// and that each clause text is the verbatim source span.
pub fn check_partition(question: &str, clauses: &[Clause]) -> Result<(), CotfError> {
    let tokens = tokenize(question);
    if clauses.is_empty() {
        return Err(CotfError::InvalidPartition("no clauses".into()));
    }
    let mut cursor = 0;
    for (i, clause) in clauses.iter().enumerate() {
        let span = clause.token_span;
        if clause.index != i {
            return Err(CotfError::InvalidPartition(format!("clause {i} has index {}", clause.index)));
        }
        if span.start != cursor || span.end <= span.start || span.end > tokens.len() {
            return Err(CotfError::InvalidPartition(format!(
                "clause {i} span {}..{} does not continue at token {cursor}",
                span.start, span.end
            )));
        }
        let verbatim = &question[tokens[span.start].start..tokens[span.end - 1].end];
        if verbatim != clause.text {
            return Err(CotfError::InvalidPartition(format!(
                "clause {i} text {:?} differs from source span {verbatim:?}",
                clause.text
            )));
        }
        cursor = span.end;
    }
    if cursor != tokens.len() {
        return Err(CotfError::InvalidPartition(format!(
            "clauses cover {cursor} of {} tokens",
            tokens.len()
        )));
    }
    Ok(())
}

/// The closed set of lookup tools. `None` is the stop signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    ValueIn,
    SimValueIn,
    UniqValue,
    Head,
    Random,
    IfNull,
    Info,
    SimColumns,
    None,
}

impl ToolKind {
    pub const ALL: [ToolKind; 9] = [
        ToolKind::ValueIn,
        ToolKind::SimValueIn,
        ToolKind::UniqValue,
        ToolKind::Head,
        ToolKind::Random,
        ToolKind::IfNull,
        ToolKind::Info,
        ToolKind::SimColumns,
        ToolKind::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ToolKind::ValueIn => "value_in",
            ToolKind::SimValueIn => "sim_value_in",
            ToolKind::UniqValue => "uniq_value",
            ToolKind::Head => "head",
            ToolKind::Random => "random",
            ToolKind::IfNull => "if_null",
            ToolKind::Info => "info",
            ToolKind::SimColumns => "sim_columns",
            ToolKind::None => "none",
        }
    }

    pub fn from_name(name: &str) -> Option<ToolKind> {
        ToolKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for ToolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One tool invocation as emitted by the model: `{"tool": .., "args": {..}}`.
///
/// The tool name is kept as a string so that calls naming unknown tools can be
/// recorded and answered with corrective feedback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    #[serde(default)]
    pub args: BTreeMap<String, Json>,
}

impl ToolCall {
    pub fn new(kind: ToolKind) -> Self {
        ToolCall { tool: kind.name().to_string(), args: BTreeMap::new() }
    }

    pub fn none() -> Self {
        ToolCall::new(ToolKind::None)
    }

    pub fn arg(mut self, key: &str, value: impl Into<Json>) -> Self {
        self.args.insert(key.to_string(), value.into());
        self
    }

    pub fn kind(&self) -> Option<ToolKind> {
        ToolKind::from_name(&self.tool)
    }

    pub fn is_none(&self) -> bool {
        self.kind() == Some(ToolKind::None)
    }

    pub fn str_arg(&self, key: &str) -> Option<&str> {
        self.args.get(key).and_then(Json::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackKind {
    Standard,
    Corrective,
    Guiding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolFeedback {
    pub kind: FeedbackKind,
    pub message: String,
    #[serde(default)]
    pub result: Option<Json>,
}

impl ToolFeedback {
    pub fn standard(message: impl Into<String>, result: Json) -> Self {
        ToolFeedback { kind: FeedbackKind::Standard, message: message.into(), result: Some(result) }
    }

    /// The feedback attached to a `none` turn.
    pub fn empty_standard() -> Self {
        ToolFeedback::standard("", Json::Object(Default::default()))
    }

    pub fn corrective(message: impl Into<String>) -> Self {
        ToolFeedback { kind: FeedbackKind::Corrective, message: message.into(), result: None }
    }

    pub fn guiding(message: impl Into<String>) -> Self {
        ToolFeedback { kind: FeedbackKind::Guiding, message: message.into(), result: None }
    }

    fn is_well_formed(&self) -> bool {
        match self.kind {
            FeedbackKind::Standard => self.result.is_some(),
            FeedbackKind::Corrective | FeedbackKind::Guiding => {
                self.result.is_none() && !self.message.is_empty()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub thought: String,
    pub tool_call: ToolCall,
    pub feedback: ToolFeedback,
}

impl Turn {
    pub fn new(thought: impl Into<String>, tool_call: ToolCall, feedback: ToolFeedback) -> Self {
        Turn { thought: thought.into(), tool_call, feedback }
    }

    /// A stop turn: `none` with an empty standard feedback.
    pub fn stop(thought: impl Into<String>) -> Self {
        Turn::new(thought, ToolCall::none(), ToolFeedback::empty_standard())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkingKind {
    Value,
    Schema,
    Function,
}

/// `(clause index, turn index)` of the turn whose feedback verified a linking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TurnRef(pub usize, pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiedLinking {
    pub kind: LinkingKind,
    #[serde(default)]
    pub table: Option<String>,
    #[serde(default)]
    pub column: Option<String>,
    #[serde(default)]
    pub literal: Option<String>,
    pub rationale: String,
    pub source_turn: TurnRef,
}

impl VerifiedLinking {
    pub fn has_required_fields(&self) -> bool {
        match self.kind {
            LinkingKind::Value => self.table.is_some() && self.column.is_some() && self.literal.is_some(),
            LinkingKind::Schema => self.table.is_some(),
            LinkingKind::Function => true,
        }
    }
}

/// A clause whose loop was cut short by a model failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClauseAbort {
    pub clause: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotfDocument {
    pub question: Question,
    pub clauses: Vec<Clause>,
    pub turns: Vec<Vec<Turn>>,
    pub verified: Vec<VerifiedLinking>,
    pub max_turns: usize,
    #[serde(default)]
    pub aborted: Vec<ClauseAbort>,
}

#[derive(Serialize, Deserialize)]
struct TraceWire {
    schema_version: u32,
    #[serde(flatten)]
    doc: CotfDocument,
}

impl CotfDocument {
    pub fn new(question: Question, clauses: Vec<Clause>, max_turns: usize) -> Result<Self, CotfError> {
        if question.text.trim().is_empty() {
            return Err(CotfError::InvalidPartition("question text is empty".into()));
        }
        if max_turns == 0 {
            return Err(CotfError::SchemaViolation("max_turns must be positive".into()));
        }
        check_partition(&question.text, &clauses)?;
        let turns = vec![Vec::new(); clauses.len()];
        Ok(CotfDocument { question, clauses, turns, verified: Vec::new(), max_turns, aborted: Vec::new() })
    }

    fn check_clause(&self, clause: usize) -> Result<(), CotfError> {
        if clause >= self.clauses.len() {
            Err(CotfError::IndexOutOfBounds { index: clause, len: self.clauses.len() })
        } else {
            Ok(())
        }
    }

    pub fn clause_turns(&self, clause: usize) -> Result<&[Turn], CotfError> {
        self.check_clause(clause)?;
        Ok(&self.turns[clause])
    }

    pub fn is_terminated(&self, clause: usize) -> Result<bool, CotfError> {
        Ok(self.clause_turns(clause)?.last().is_some_and(|t| t.tool_call.is_none()))
    }

    /// Whether the clause can take no more turns (stopped or at the cap).
    pub fn is_finished(&self, clause: usize) -> Result<bool, CotfError> {
        Ok(self.is_terminated(clause)? || self.turns[clause].len() >= self.max_turns)
    }

    pub fn append_turn(&mut self, clause: usize, turn: Turn) -> Result<(), CotfError> {
        if self.is_terminated(clause)? {
            return Err(CotfError::ClauseTerminated(clause));
        }
        if self.turns[clause].len() >= self.max_turns {
            return Err(CotfError::TurnBudgetExceeded { clause, max_turns: self.max_turns });
        }
        self.turns[clause].push(turn);
        Ok(())
    }

    /// True iff an earlier turn of `clause` made the identical call.
    pub fn detect_repeat(&self, clause: usize, call: &ToolCall) -> Result<bool, CotfError> {
        Ok(self.clause_turns(clause)?.iter().any(|t| &t.tool_call == call))
    }

    pub fn turn(&self, at: TurnRef) -> Option<&Turn> {
        self.turns.get(at.0).and_then(|ts| ts.get(at.1))
    }

    pub fn total_turns(&self) -> usize {
        self.turns.iter().map(Vec::len).sum()
    }

    /// All turns with their coordinates, clause-major.
    pub fn iter_turns(&self) -> impl Iterator<Item = (TurnRef, &Turn)> {
        self.turns
            .iter()
            .enumerate()
            .flat_map(|(c, ts)| ts.iter().enumerate().map(move |(t, turn)| (TurnRef(c, t), turn)))
    }

    pub fn validate(&self) -> Result<(), CotfError> {
        let bad = |m: String| Err(CotfError::SchemaViolation(m));
        if self.max_turns == 0 {
            return bad("max_turns must be positive".into());
        }
        check_partition(&self.question.text, &self.clauses)
            .map_err(|e| CotfError::SchemaViolation(e.to_string()))?;
        if self.turns.len() != self.clauses.len() {
            return bad(format!("{} turn lists for {} clauses", self.turns.len(), self.clauses.len()));
        }
        for (c, turns) in self.turns.iter().enumerate() {
            if turns.len() > self.max_turns {
                return bad(format!("clause {c} has {} turns (max {})", turns.len(), self.max_turns));
            }
            for (t, turn) in turns.iter().enumerate() {
                if turn.tool_call.is_none() && t + 1 != turns.len() {
                    return bad(format!("clause {c} continues after `none` at turn {t}"));
                }
                if !turn.feedback.is_well_formed() {
                    return bad(format!("clause {c} turn {t} has malformed feedback"));
                }
            }
        }
        for v in &self.verified {
            match self.turn(v.source_turn) {
                Some(turn) if turn.feedback.kind == FeedbackKind::Standard => {}
                _ => return bad(format!("verified linking references turn {:?}", v.source_turn)),
            }
            if !v.has_required_fields() {
                return bad(format!("{:?} linking lacks required fields", v.kind));
            }
        }
        for a in &self.aborted {
            if a.clause >= self.clauses.len() {
                return bad(format!("abort record for clause {}", a.clause));
            }
        }
        Ok(())
    }

    /// Canonical trace bytes: sorted keys, compact, UTF-8.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        let wire = TraceWire { schema_version: TRACE_SCHEMA_VERSION, doc: self.clone() };
        let value = serde_json::to_value(&wire).expect("trace is always representable as JSON");
        to_canonical_bytes(&value)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, CotfError> {
        let value: Json =
            serde_json::from_slice(bytes).map_err(|e| CotfError::SchemaViolation(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| CotfError::SchemaViolation("trace must be a JSON object".into()))?;
        for key in ["schema_version", "question", "clauses", "turns", "verified", "max_turns"] {
            if !obj.contains_key(key) {
                return Err(CotfError::SchemaViolation(format!("missing key {key:?}")));
            }
        }
        let wire: TraceWire =
            serde_json::from_value(value).map_err(|e| CotfError::SchemaViolation(e.to_string()))?;
        if wire.schema_version != TRACE_SCHEMA_VERSION {
            return Err(CotfError::SchemaViolation(format!(
                "unsupported schema_version {}",
                wire.schema_version
            )));
        }
        wire.doc.validate()?;
        Ok(wire.doc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidenceStyle {
    Long,
    Concise,
}

impl EvidenceStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            EvidenceStyle::Long => "long",
            EvidenceStyle::Concise => "concise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub style: EvidenceStyle,
    pub text: String,
    pub candidate_count: usize,
    /// `question_id` of the document the evidence was synthesized from.
    pub source: String,
    #[serde(default)]
    pub removed_claims: Vec<String>,
}
