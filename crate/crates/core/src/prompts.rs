//! Prompt templates and request builders for every assistant.

use serde::Deserialize;
use serde_json::Value as Json;
use thiserror::Error;

use crate::cotf::{CotfDocument, CotfError, EvidenceStyle};
use crate::llm::{ChatMessage, ChatRequest, ResponseFormat};
use crate::toolbox;

pub const SEGMENTATION: &str = include_str!("../prompts/segmentation.txt");
pub const LOOKUP_SYSTEM: &str = include_str!("../prompts/lookup_system.txt");
pub const LOOKUP_USER: &str = include_str!("../prompts/lookup_user.txt");
pub const HARVEST: &str = include_str!("../prompts/harvest.txt");
pub const EVIDENCE_LONG: &str = include_str!("../prompts/evidence_long.txt");
pub const EVIDENCE_CONCISE: &str = include_str!("../prompts/evidence_concise.txt");
pub const MERGE: &str = include_str!("../prompts/merge.txt");

/// Bundled `CoTF → concise evidence` style examples.
pub const CONCISE_SHOTS_JSON: &str = include_str!("../data/concise_shots.json");

/// The workspace as shown to the model: the canonical trace.
pub fn workspace_json(doc: &CotfDocument) -> String {
    String::from_utf8(doc.to_canonical_json()).expect("canonical JSON is UTF-8")
}

pub fn segmentation_request(question: &str, temperature: f64) -> ChatRequest {
    ChatRequest::new(
        vec![ChatMessage::system(SEGMENTATION), ChatMessage::user(format!("Question: {question}\nClauses:"))],
        temperature,
        ResponseFormat::FreeText,
    )
}

/// System text plus tool guidance; identical for every lookup turn.
pub fn lookup_system_prompt() -> String {
    format!("{LOOKUP_SYSTEM}{}", toolbox::guidance())
}

pub fn lookup_request(doc: &CotfDocument, clause: usize, temperature: f64) -> ChatRequest {
    let user = LOOKUP_USER
        .replace("{{workspace}}", &workspace_json(doc))
        .replace("{{clause_index}}", &clause.to_string())
        .replace("{{clause_text}}", &doc.clauses[clause].text)
        .replace("{{turn_number}}", &(doc.turns[clause].len() + 1).to_string())
        .replace("{{max_turns}}", &doc.max_turns.to_string());
    ChatRequest::new(
        vec![ChatMessage::system(lookup_system_prompt()), ChatMessage::user(user)],
        temperature,
        ResponseFormat::ToolCallSchema,
    )
}

fn workspace_message(doc: &CotfDocument) -> ChatMessage {
    ChatMessage::user(format!("Workspace:\n{}", workspace_json(doc)))
}

pub fn harvest_request(doc: &CotfDocument, temperature: f64) -> ChatRequest {
    ChatRequest::new(
        vec![ChatMessage::system(HARVEST), workspace_message(doc)],
        temperature,
        ResponseFormat::FreeText,
    )
}

pub fn long_request(doc: &CotfDocument, temperature: f64) -> ChatRequest {
    ChatRequest::new(
        vec![ChatMessage::system(EVIDENCE_LONG), workspace_message(doc)],
        temperature,
        ResponseFormat::FreeText,
    )
}

pub fn concise_request(doc: &CotfDocument, shots: &[ShotPair], temperature: f64) -> ChatRequest {
    let mut messages = vec![ChatMessage::system(EVIDENCE_CONCISE)];
    for shot in shots {
        messages.push(workspace_message(&shot.cotf));
        messages.push(ChatMessage::assistant(shot.evidence.clone()));
    }
    messages.push(workspace_message(doc));
    ChatRequest::new(messages, temperature, ResponseFormat::FreeText)
}

pub fn merge_request(doc: &CotfDocument, style: EvidenceStyle, candidates: &[String], temperature: f64) -> ChatRequest {
    let mut body = format!("Workspace:\n{}\n\nStyle: {}\n", workspace_json(doc), style.as_str());
    for (i, c) in candidates.iter().enumerate() {
        body.push_str(&format!("\nCandidate {}:\n{}\n", i + 1, c.trim()));
    }
    ChatRequest::new(vec![ChatMessage::system(MERGE), ChatMessage::user(body)], temperature, ResponseFormat::FreeText)
}

/// One style-alignment example.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotPair {
    pub cotf: CotfDocument,
    pub evidence: String,
}

#[derive(Debug, Error)]
pub enum ShotError {
    #[error("shot file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("shot {index}: {source}")]
    Trace { index: usize, source: CotfError },
    #[error("expected {expected} shots, found {found}")]
    Count { expected: usize, found: usize },
}

#[derive(Deserialize)]
struct ShotWire {
    cotf: Json,
    evidence: String,
}

/// Parses a shot file: a JSON list of `{cotf: <trace>, evidence: <string>}`.
pub fn parse_shots(json: &str) -> Result<Vec<ShotPair>, ShotError> {
    let wire: Vec<ShotWire> = serde_json::from_str(json)?;
    wire.into_iter()
        .enumerate()
        .map(|(index, w)| {
            let bytes = serde_json::to_vec(&w.cotf)?;
            let cotf = CotfDocument::from_json(&bytes).map_err(|source| ShotError::Trace { index, source })?;
            Ok(ShotPair { cotf, evidence: w.evidence })
        })
        .collect()
}

/// The five bundled shots.
pub fn default_shots() -> Vec<ShotPair> {
    parse_shots(CONCISE_SHOTS_JSON).expect("bundled shots are valid")
}
