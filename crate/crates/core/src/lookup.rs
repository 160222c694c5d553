//! The per-clause think, verify and refine loop over the CoTF workspace.

use std::collections::BTreeSet;

use serde::Deserialize;
use serde_json::Value as Json;

use crate::cotf::{
    ClauseAbort, CotfDocument, CotfError, FeedbackKind, LinkingKind, ToolCall, ToolFeedback, ToolKind, Turn,
    TurnRef, VerifiedLinking,
};
use crate::facts::{document_facts, linking_supported, scalar_text, turn_facts, FactSet};
use crate::llm::{LlmClient, LlmError};
use crate::prompts::{harvest_request, lookup_request};
use crate::toolbox::{dispatch, ToolContext};

/// Guide sent when `value_in` is repeated with identical arguments.
pub const VALUE_IN_GUIDE: &str = "This tool has been called before. Consider using sim_value_in for a fuzzy search.";

const REPEAT_PREFIX: &str = "This tool has been called before.";

/// Suggestion attached to a repeated call of `trigger`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteRule {
    pub trigger: ToolKind,
    pub suggestion: String,
}

impl RouteRule {
    fn new(trigger: ToolKind, route: ToolKind, purpose: &str) -> Self {
        RouteRule { trigger, suggestion: format!("{REPEAT_PREFIX} Consider using {route} {purpose}.") }
    }
}

/// One rule per probing tool, each escalating from a narrow probe to a broader one.
pub fn default_rules() -> Vec<RouteRule> {
    use ToolKind::*;
    vec![
        RouteRule::new(ValueIn, SimValueIn, "for a fuzzy search"),
        RouteRule::new(SimValueIn, UniqValue, "to list the stored values of the column"),
        RouteRule::new(UniqValue, Info, "to read the column descriptions of the table"),
        RouteRule::new(Head, UniqValue, "to list the stored values of one column"),
        RouteRule::new(Random, UniqValue, "to list the stored values of one column"),
        RouteRule::new(IfNull, Info, "to read the column descriptions of the table"),
        RouteRule::new(Info, SimColumns, "to find related columns in other tables"),
        RouteRule::new(SimColumns, Head, "to look at rows of a candidate table"),
    ]
}

fn suggestion_for<'r>(rules: &'r [RouteRule], call: &ToolCall) -> Option<&'r str> {
    let kind = call.kind()?;
    rules.iter().find(|r| r.trigger == kind).map(|r| r.suggestion.as_str())
}

/// Guiding feedback for a repeat, otherwise whatever `run` returns. `run` is
/// not invoked for repeats, so no database work happens for them.
pub fn classify_feedback(
    call: &ToolCall,
    repeat: bool,
    rules: &[RouteRule],
    run: impl FnOnce() -> ToolFeedback,
) -> ToolFeedback {
    if !repeat {
        return run();
    }
    match suggestion_for(rules, call) {
        Some(s) => ToolFeedback::guiding(s),
        None => ToolFeedback::guiding(format!("{REPEAT_PREFIX} Change the tool or its parameters.")),
    }
}

/// Turns still available to a question, across all its clauses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TurnBudget {
    pub remaining: usize,
}

impl TurnBudget {
    pub fn for_document(doc: &CotfDocument) -> Self {
        TurnBudget { remaining: doc.max_turns * doc.clauses.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClauseOutcome {
    /// The model called `none`.
    Stopped,
    /// The per-clause cap was reached.
    Capped,
    /// The per-question budget ran out.
    BudgetExhausted,
    /// A model failure ended the clause; recorded in `doc.aborted`.
    Aborted(String),
}

/// The call recorded for a reply that failed validation twice: the raw
/// `tool`/`args` fields when present, else an empty tool name.
fn salvage_call(raw: &str) -> ToolCall {
    for (start, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Json>();
        if let Some(Ok(Json::Object(obj))) = stream.next() {
            if let Some(tool) = obj.get("tool") {
                let tool = tool.as_str().map(str::to_string).unwrap_or_else(|| tool.to_string());
                let args = match obj.get("args") {
                    Some(Json::Object(m)) => m.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
                    _ => Default::default(),
                };
                return ToolCall { tool, args };
            }
        }
    }
    ToolCall { tool: String::new(), args: Default::default() }
}

fn salvage_thought(raw: &str) -> String {
    raw.split('{').next().unwrap_or_default().trim().to_string()
}

/// Runs one clause until `none`, the per-clause cap or the question budget.
pub fn run_clause(
    doc: &mut CotfDocument,
    clause: usize,
    llm: &LlmClient,
    ctx: &ToolContext<'_>,
    rules: &[RouteRule],
    temperature: f64,
    budget: &mut TurnBudget,
) -> Result<ClauseOutcome, CotfError> {
    if doc.is_terminated(clause)? {
        return Err(CotfError::ClauseTerminated(clause));
    }
    loop {
        if doc.is_terminated(clause)? {
            return Ok(ClauseOutcome::Stopped);
        }
        if doc.clause_turns(clause)?.len() >= doc.max_turns {
            return Ok(ClauseOutcome::Capped);
        }
        if budget.remaining == 0 {
            return Ok(ClauseOutcome::BudgetExhausted);
        }
        let request = lookup_request(doc, clause, temperature);
        let turn = match llm.structured_tool_call(&request) {
            Ok(reply) => {
                let repeat = doc.detect_repeat(clause, &reply.call)?;
                let feedback = classify_feedback(&reply.call, repeat, rules, || dispatch(&reply.call, ctx));
                Turn::new(reply.thought, reply.call, feedback)
            }
            Err(LlmError::MalformedToolCall { second_raw, error, .. }) => Turn::new(
                salvage_thought(&second_raw),
                salvage_call(&second_raw),
                ToolFeedback::corrective(format!("invalid tool call: {error}")),
            ),
            Err(e) => {
                let reason = e.to_string();
                tracing::warn!(clause, "lookup aborted: {reason}");
                doc.aborted.push(ClauseAbort { clause, reason: reason.clone() });
                return Ok(ClauseOutcome::Aborted(reason));
            }
        };
        doc.append_turn(clause, turn)?;
        budget.remaining -= 1;
    }
}

/// Runs every clause in order; later clauses see earlier facts through the
/// serialized workspace.
pub fn run_lookup(
    doc: &mut CotfDocument,
    llm: &LlmClient,
    ctx: &ToolContext<'_>,
    rules: &[RouteRule],
    temperature: f64,
) -> Result<Vec<ClauseOutcome>, CotfError> {
    let mut budget = TurnBudget::for_document(doc);
    let mut outcomes = Vec::with_capacity(doc.clauses.len());
    for clause in 0..doc.clauses.len() {
        if doc.is_finished(clause)? {
            outcomes.push(if doc.is_terminated(clause)? { ClauseOutcome::Stopped } else { ClauseOutcome::Capped });
            continue;
        }
        outcomes.push(run_clause(doc, clause, llm, ctx, rules, temperature, &mut budget)?);
    }
    Ok(outcomes)
}

#[derive(Deserialize)]
struct LinkingWire {
    kind: LinkingKind,
    #[serde(default)]
    table: Option<Json>,
    #[serde(default)]
    column: Option<Json>,
    #[serde(default)]
    literal: Option<Json>,
    #[serde(default)]
    rationale: Option<String>,
    #[serde(default)]
    source_turn: Option<(usize, usize)>,
}

fn opt_text(v: Option<Json>) -> Option<String> {
    v.as_ref().and_then(scalar_text).filter(|s| !s.is_empty())
}

fn parse_linkings(raw: &str) -> Vec<LinkingWire> {
    for (start, _) in raw.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Json>();
        if let Some(Ok(Json::Array(items))) = stream.next() {
            return items.into_iter().filter_map(|i| serde_json::from_value(i).ok()).collect();
        }
    }
    Vec::new()
}

fn is_fact_turn(turn: &Turn) -> bool {
    turn.feedback.kind == FeedbackKind::Standard && !turn.tool_call.is_none()
}

/// Picks a standard turn that supports `linking`, preferring `proposed`.
fn anchor(doc: &CotfDocument, facts: &FactSet, linking: &VerifiedLinking, proposed: Option<TurnRef>) -> Option<TurnRef> {
    let supports = |turn: &Turn| is_fact_turn(turn) && linking_supported(&turn_facts(turn), linking);
    if let Some(at) = proposed {
        if doc.turn(at).is_some_and(supports) {
            return Some(at);
        }
    }
    if let Some((at, _)) = doc.iter_turns().find(|(_, t)| supports(t)) {
        return Some(at);
    }
    if linking.kind != LinkingKind::Function || !linking_supported(facts, linking) {
        return None;
    }
    // A computation may combine columns verified in different turns.
    if let Some(at) = proposed.filter(|at| doc.turn(*at).is_some_and(is_fact_turn)) {
        return Some(at);
    }
    doc.iter_turns().find(|(_, t)| is_fact_turn(t)).map(|(at, _)| at)
}

/// Asks the model which facts were confirmed and keeps only proposals that
/// are grounded in the document's standard feedback. A model failure yields
/// an empty list.
pub fn harvest_linkings(doc: &CotfDocument, llm: &LlmClient, temperature: f64) -> Vec<VerifiedLinking> {
    let facts = document_facts(doc);
    if facts.is_empty() {
        return Vec::new();
    }
    let raw = match llm.chat(&harvest_request(doc, temperature)) {
        Ok(raw) => raw,
        Err(e) => {
            tracing::warn!(question = %doc.question.question_id, "harvest failed: {e}");
            return Vec::new();
        }
    };
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for w in parse_linkings(&raw) {
        let mut linking = VerifiedLinking {
            kind: w.kind,
            table: opt_text(w.table),
            column: opt_text(w.column),
            literal: opt_text(w.literal),
            rationale: w.rationale.unwrap_or_default(),
            source_turn: TurnRef(0, 0),
        };
        if !linking.has_required_fields() || !linking_supported(&facts, &linking) {
            tracing::debug!(?linking, "dropping ungrounded linking");
            continue;
        }
        let Some(at) = anchor(doc, &facts, &linking, w.source_turn.map(|(c, t)| TurnRef(c, t))) else {
            continue;
        };
        linking.source_turn = at;
        let key = (
            linking.kind,
            linking.table.as_deref().map(str::to_lowercase),
            linking.column.as_deref().map(str::to_lowercase),
            linking.literal.clone(),
        );
        if seen.insert(key) {
            out.push(linking);
        }
    }
    out
}
