//! One question end to end: breakup, lookup, harvest and evidence.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::breakup::break_up;
use crate::cotf::{CotfDocument, CotfError, Evidence, EvidenceStyle, Question, DEFAULT_MAX_TURNS};
use crate::db::{Database, SchemaCatalog};
use crate::embed::Embedder;
use crate::evidence::self_consistency;
use crate::llm::{LlmClient, LlmError, Temperatures};
use crate::lookup::{default_rules, harvest_linkings, run_lookup, ClauseOutcome, RouteRule};
use crate::prompts::{default_shots, ShotPair};
use crate::toolbox::{SeedPolicy, ToolContext};

pub const DEFAULT_CANDIDATES: usize = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("model call failed: {0}")]
    Llm(#[from] LlmError),
    #[error("workspace error: {0}")]
    Cotf(#[from] CotfError),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub max_turns: usize,
    pub temperatures: Temperatures,
    pub candidates: usize,
    pub styles: Vec<EvidenceStyle>,
    pub shots: Vec<ShotPair>,
    pub rules: Vec<RouteRule>,
    /// Base seed for `random`; `None` draws live seeds.
    pub seed: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_turns: DEFAULT_MAX_TURNS,
            temperatures: Temperatures::default(),
            candidates: DEFAULT_CANDIDATES,
            styles: vec![EvidenceStyle::Long, EvidenceStyle::Concise],
            shots: default_shots(),
            rules: default_rules(),
            seed: Some(0),
        }
    }
}

/// Per-question seed policy derived from the base seed and the question id.
pub fn seed_policy(base: Option<u64>, question_id: &str) -> SeedPolicy {
    match base {
        Some(base) => {
            let mut h = Sha256::new();
            h.update(base.to_le_bytes());
            h.update(question_id.as_bytes());
            let d = h.finalize();
            SeedPolicy::Fixed(u64::from_le_bytes(d[..8].try_into().expect("8 bytes")))
        }
        None => SeedPolicy::Live,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionOutput {
    pub doc: CotfDocument,
    pub outcomes: Vec<ClauseOutcome>,
    pub evidence: Vec<Evidence>,
}

/// Runs the full pipeline for one question. Model calls happen in a fixed
/// order (segmentation, lookup turns, harvest, then per style the candidates
/// and the merge), so a positional replay script reproduces a run exactly.
pub fn run_question(
    question: &Question,
    db: &dyn Database,
    catalog: &SchemaCatalog,
    embedder: &dyn Embedder,
    llm: &LlmClient,
    config: &PipelineConfig,
) -> Result<QuestionOutput, PipelineError> {
    let t = config.temperatures;
    let clauses = break_up(&question.text, llm, t.breakup)?;
    let mut doc = CotfDocument::new(question.clone(), clauses, config.max_turns)?;
    let ctx = ToolContext { db, catalog, embedder, seed: seed_policy(config.seed, &question.question_id) };
    let outcomes = run_lookup(&mut doc, llm, &ctx, &config.rules, t.lookup)?;
    doc.verified = harvest_linkings(&doc, llm, t.evidence);
    doc.validate()?;
    let evidence = config
        .styles
        .iter()
        .map(|&style| self_consistency(&doc, llm, style, config.candidates, &config.shots, Some(catalog), t.evidence))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(QuestionOutput { doc, outcomes, evidence })
}
