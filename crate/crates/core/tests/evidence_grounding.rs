mod support;

use evidencer::breakup::token_refine;
use evidencer::cotf::{CotfDocument, EvidenceStyle, LinkingKind, Question, TurnRef, VerifiedLinking};
use evidencer::embed::LexicalEmbedder;
use evidencer::evidence::{grounding_filter, self_consistency, sentences, NO_FINDINGS_CONCISE, NO_FINDINGS_LONG};
use evidencer::llm::{LlmClient, ScriptedSession};
use evidencer::lookup::{default_rules, run_lookup};
use evidencer::prompts::default_shots;
use evidencer::toolbox::{SeedPolicy, ToolContext};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use support::{reply, stop, Fixture, DB_ID};

const QUESTION: &str = "Which magnet schools offer Kindergarten to 8th grade?";

fn llm<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> LlmClient {
    LlmClient::scripted(ScriptedSession::from_responses(replies))
}

/// A document whose lookup confirmed `frpm`.`Low Grade` holds 'K'.
fn looked_up(fx: &Fixture) -> CotfDocument {
    let (db, cat, emb) = (fx.open(), fx.catalog(), LexicalEmbedder::default());
    let clauses = token_refine(QUESTION, &[QUESTION.to_string()]);
    let mut doc = CotfDocument::new(Question::new("q7", DB_ID, QUESTION), clauses, 5).unwrap();
    let model = llm([
        reply("Is K stored?", "value_in", json!({"table": "frpm", "column": "Low Grade", "value": "K"})),
        reply("What does High Grade hold?", "uniq_value", json!({"table": "frpm", "column": "High Grade"})),
        stop("done"),
    ]);
    let ctx = ToolContext { db: &db, catalog: &cat, embedder: &emb, seed: SeedPolicy::Fixed(0) };
    run_lookup(&mut doc, &model, &ctx, &default_rules(), 0.7).unwrap();
    doc
}

const GROUNDED: &[&str] = &[
    "Kindergarten is stored as 'K' in `frpm`.`Low Grade`.",
    "The eighth grade appears as '8' in `High Grade`.",
    "Magnet status is kept in `schools`.`Magnet`.",
    "Filter on `Low Grade` = 'K' and `High Grade` = '8'.",
];

const HALLUCINATED: &[&str] = &[
    "The grade span is stored in `frpm`.`Grade Span`.",
    "Kindergarten is written as 'Kindergarten' in `Low Grade`.",
    "Use the column `MagnetFlag` for magnet schools.",
    "The table `school_types` lists magnet programs.",
    "Filter on schools.MagnetFlag = 1.",
];

const NEUTRAL: &[&str] = &["Join the two tables on the school code.", "Count distinct schools."];

#[test]
fn hallucinated_column_is_removed() {
    let fx = Fixture::new();
    let (doc, cat) = (looked_up(&fx), fx.catalog());
    let text = format!("{} {}", GROUNDED[0], HALLUCINATED[0]);
    let g = grounding_filter(&text, &doc, Some(&cat));
    assert_eq!(g.text, GROUNDED[0]);
    assert_eq!(g.removed_claims, vec![HALLUCINATED[0].to_string()]);
    assert!(!g.text.contains("Grade Span"));
}

#[test]
fn fully_grounded_text_is_unchanged() {
    let fx = Fixture::new();
    let (doc, cat) = (looked_up(&fx), fx.catalog());
    let text = GROUNDED.join(" ");
    let g = grounding_filter(&text, &doc, Some(&cat));
    assert_eq!(g.text, text);
    assert!(g.removed_claims.is_empty());
}

#[test]
fn filter_is_idempotent_and_drops_every_hallucination_on_fuzzed_text() {
    let fx = Fixture::new();
    let (doc, cat) = (looked_up(&fx), fx.catalog());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pool: Vec<(&str, bool)> = GROUNDED
        .iter()
        .chain(NEUTRAL)
        .map(|s| (*s, true))
        .chain(HALLUCINATED.iter().map(|s| (*s, false)))
        .collect();
    for _ in 0..200 {
        let n = rng.gen_range(1..=6);
        let picked: Vec<(&str, bool)> = (0..n).map(|_| *pool.choose(&mut rng).unwrap()).collect();
        let sep = if rng.gen_bool(0.5) { " " } else { "\n" };
        let text = picked.iter().map(|(s, _)| *s).collect::<Vec<_>>().join(sep);
        let once = grounding_filter(&text, &doc, Some(&cat));
        let twice = grounding_filter(&once.text, &doc, Some(&cat));
        assert_eq!(twice.text, once.text, "{text:?}");
        assert!(twice.removed_claims.is_empty());
        let expected_kept: Vec<&str> = picked.iter().filter(|(_, ok)| *ok).map(|(s, _)| *s).collect();
        assert_eq!(sentences(&once.text), expected_kept, "{text:?}");
        assert_eq!(once.removed_claims.len(), picked.len() - expected_kept.len());
    }
}

#[test]
fn merge_keeps_the_union_of_candidate_facts() {
    let fx = Fixture::new();
    let (doc, cat) = (looked_up(&fx), fx.catalog());
    let model = llm([
        GROUNDED[0].to_string(),
        format!("{} {}", GROUNDED[1], HALLUCINATED[2]),
        GROUNDED[2].to_string(),
        format!("{} {}", GROUNDED[0], HALLUCINATED[1]),
    ]);
    let ev = self_consistency(&doc, &model, EvidenceStyle::Long, 3, &[], Some(&cat), 0.7).unwrap();
    assert_eq!(model.call_count(), 4);
    assert_eq!(ev.candidate_count, 3);
    for needle in ["'K'", "`Low Grade`", "'8'", "`High Grade`", "`schools`.`Magnet`"] {
        assert!(ev.text.contains(needle), "{needle} missing from {:?}", ev.text);
    }
    for bad in ["MagnetFlag", "'Kindergarten'"] {
        assert!(!ev.text.contains(bad));
    }
    assert_eq!(ev.removed_claims.len(), 2);
}

#[test]
fn single_candidate_skips_the_merge() {
    let fx = Fixture::new();
    let (doc, cat) = (looked_up(&fx), fx.catalog());
    let model = llm([GROUNDED[0]]);
    let ev = self_consistency(&doc, &model, EvidenceStyle::Concise, 1, &default_shots(), Some(&cat), 0.7).unwrap();
    assert_eq!(model.call_count(), 1);
    assert_eq!(ev.text, GROUNDED[0]);
    assert!(self_consistency(&doc, &model, EvidenceStyle::Concise, 0, &[], Some(&cat), 0.7).is_err());
}

#[test]
fn empty_workspace_yields_no_findings_without_a_call() {
    let clauses = token_refine(QUESTION, &[QUESTION.to_string()]);
    let doc = CotfDocument::new(Question::new("q0", DB_ID, QUESTION), clauses, 5).unwrap();
    let model = llm(Vec::<String>::new());
    let long = self_consistency(&doc, &model, EvidenceStyle::Long, 3, &[], None, 0.7).unwrap();
    let concise = self_consistency(&doc, &model, EvidenceStyle::Concise, 1, &[], None, 0.7).unwrap();
    assert_eq!((long.text.as_str(), concise.text.as_str()), (NO_FINDINGS_LONG, NO_FINDINGS_CONCISE));
    assert_eq!(model.call_count(), 0);
}

#[test]
fn omitted_verified_linking_is_restored() {
    let fx = Fixture::new();
    let (mut doc, cat) = (looked_up(&fx), fx.catalog());
    doc.verified.push(VerifiedLinking {
        kind: LinkingKind::Value,
        table: Some("frpm".into()),
        column: Some("Low Grade".into()),
        literal: Some("K".into()),
        rationale: "kindergarten".into(),
        source_turn: TurnRef(0, 0),
    });
    let model = llm([NEUTRAL[1]]);
    let ev = self_consistency(&doc, &model, EvidenceStyle::Concise, 1, &[], Some(&cat), 0.7).unwrap();
    assert!(ev.text.starts_with(NEUTRAL[1]));
    assert!(ev.text.contains("`frpm`.`Low Grade` = 'K'"), "{}", ev.text);
}

#[test]
fn fully_hallucinated_output_degrades_to_no_findings() {
    let fx = Fixture::new();
    let (doc, cat) = (looked_up(&fx), fx.catalog());
    let model = llm([HALLUCINATED.join(" ")]);
    let ev = self_consistency(&doc, &model, EvidenceStyle::Long, 1, &[], Some(&cat), 0.7).unwrap();
    assert_eq!(ev.text, NO_FINDINGS_LONG);
    assert_eq!(ev.removed_claims.len(), HALLUCINATED.len());
}
