mod support;

use std::time::{Duration, Instant};

use evidencer::breakup::token_refine;
use evidencer::cotf::{CotfDocument, FeedbackKind, LinkingKind, Question, ToolCall, ToolKind, TurnRef};
use evidencer::db::SchemaCatalog;
use evidencer::embed::LexicalEmbedder;
use evidencer::llm::{LlmClient, ScriptedSession};
use evidencer::lookup::{default_rules, harvest_linkings, run_lookup, ClauseOutcome, VALUE_IN_GUIDE};
use evidencer::toolbox::{dispatch, SeedPolicy, ToolContext};
use serde_json::json;
use support::{reply, stop, CountingDb, Fixture, DB_ID};

const QUESTION: &str = "Which magnet schools offer Kindergarten to 8th grade?";

fn doc(clauses: &[&str]) -> CotfDocument {
    let proposed: Vec<String> = clauses.iter().map(|s| s.to_string()).collect();
    CotfDocument::new(Question::new("q1", DB_ID, QUESTION), token_refine(QUESTION, &proposed), 5).unwrap()
}

fn llm(replies: Vec<String>) -> LlmClient {
    LlmClient::scripted(ScriptedSession::from_responses(replies))
}

fn ctx<'a>(db: &'a dyn evidencer::db::Database, cat: &'a SchemaCatalog, emb: &'a LexicalEmbedder) -> ToolContext<'a> {
    ToolContext { db, catalog: cat, embedder: emb, seed: SeedPolicy::Fixed(3) }
}

fn value_in_k() -> String {
    reply("Check the stored code for kindergarten.", "value_in", json!({"table": "frpm", "column": "Low Grade", "value": "K"}))
}

#[test]
fn clause_stops_when_model_calls_none() {
    let fx = Fixture::new();
    let (db, cat, emb) = (fx.open(), fx.catalog(), LexicalEmbedder::default());
    let mut d = doc(&[QUESTION]);
    let model = llm(vec![value_in_k(), stop("The code is K.")]);
    let outcomes = run_lookup(&mut d, &model, &ctx(&db, &cat, &emb), &default_rules(), 0.7).unwrap();
    assert_eq!(outcomes, vec![ClauseOutcome::Stopped]);
    assert_eq!(d.turns[0].len(), 2);
    assert_eq!(d.turns[0][0].feedback.kind, FeedbackKind::Standard);
    assert_eq!(d.turns[0][0].feedback.result.as_ref().unwrap()["exists"], true);
    assert!(d.turns[0][1].tool_call.is_none());
    d.validate().unwrap();
}

#[test]
fn adversarial_model_is_capped_at_five_turns_per_clause() {
    let fx = Fixture::new();
    let (db, cat, emb) = (fx.open(), fx.catalog(), LexicalEmbedder::default());
    let mut d = doc(&["Which magnet schools", "offer Kindergarten to 8th grade?"]);
    let replies: Vec<String> = (0..40)
        .map(|i| reply("keep probing", "value_in", json!({"table": "schools", "column": "Magnet", "value": i % 3})))
        .collect();
    let model = llm(replies);
    let start = Instant::now();
    let outcomes = run_lookup(&mut d, &model, &ctx(&db, &cat, &emb), &default_rules(), 0.7).unwrap();
    assert!(start.elapsed() < Duration::from_secs(5));
    assert_eq!(outcomes, vec![ClauseOutcome::Capped, ClauseOutcome::Capped]);
    assert_eq!(d.turns.iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 5]);
    assert_eq!(model.call_count(), 10);
}

#[test]
fn repeated_value_in_is_guided_without_a_query() {
    let fx = Fixture::new();
    let (cat, emb) = (fx.catalog(), LexicalEmbedder::default());
    let probe = CountingDb::new(fx.open());
    let call = ToolCall::new(ToolKind::ValueIn).arg("table", "frpm").arg("column", "Low Grade").arg("value", "K");
    dispatch(&call, &ctx(&probe, &cat, &emb));
    let per_call = probe.count();
    assert!(per_call > 0);

    let db = CountingDb::new(fx.open());
    let mut d = doc(&[QUESTION]);
    let model = llm(vec![value_in_k(), value_in_k(), stop("done")]);
    run_lookup(&mut d, &model, &ctx(&db, &cat, &emb), &default_rules(), 0.7).unwrap();
    let guided = &d.turns[0][1];
    assert_eq!(guided.feedback.kind, FeedbackKind::Guiding);
    assert_eq!(guided.feedback.message, VALUE_IN_GUIDE);
    assert!(guided.feedback.result.is_none());
    assert_eq!(db.count(), per_call, "the repeated call reached the database");
}

#[test]
fn corrective_feedback_is_followed_by_recovery() {
    let fx = Fixture::new();
    let (db, cat, emb) = (fx.open(), fx.catalog(), LexicalEmbedder::default());
    let mut d = doc(&[QUESTION]);
    let model = llm(vec![
        reply("Guess the column name.", "uniq_value", json!({"table": "frpm", "column": "LowGrade"})),
        reply("Use the exact name.", "uniq_value", json!({"table": "frpm", "column": "Low Grade"})),
        stop("K is stored."),
    ]);
    run_lookup(&mut d, &model, &ctx(&db, &cat, &emb), &default_rules(), 0.7).unwrap();
    let kinds: Vec<FeedbackKind> = d.turns[0].iter().map(|t| t.feedback.kind).collect();
    assert_eq!(kinds[..2], [FeedbackKind::Corrective, FeedbackKind::Standard]);
    assert!(d.turns[0][0].feedback.message.contains("no such column"));
    assert!(d.turns[0][1].feedback.result.as_ref().unwrap()["samples"].as_array().unwrap().contains(&json!("K")));
}

#[test]
fn unknown_tool_after_repair_becomes_a_corrective_turn() {
    let fx = Fixture::new();
    let (db, cat, emb) = (fx.open(), fx.catalog(), LexicalEmbedder::default());
    let mut d = doc(&[QUESTION]);
    let model = llm(vec![
        reply("try", "run_sql", json!({"sql": "SELECT 1"})),
        reply("again", "run_sql", json!({"sql": "SELECT 1"})),
        stop("stop"),
    ]);
    run_lookup(&mut d, &model, &ctx(&db, &cat, &emb), &default_rules(), 0.7).unwrap();
    let t = &d.turns[0][0];
    assert_eq!(t.tool_call.tool, "run_sql");
    assert_eq!(t.feedback.kind, FeedbackKind::Corrective);
    assert!(t.feedback.message.starts_with("invalid tool call"));
    assert_eq!(d.turns[0].len(), 2);
}

#[test]
fn exhausted_model_aborts_the_clause() {
    let fx = Fixture::new();
    let (db, cat, emb) = (fx.open(), fx.catalog(), LexicalEmbedder::default());
    let mut d = doc(&["Which magnet schools", "offer Kindergarten to 8th grade?"]);
    let model = llm(vec![value_in_k()]);
    let outcomes = run_lookup(&mut d, &model, &ctx(&db, &cat, &emb), &default_rules(), 0.7).unwrap();
    assert!(matches!(outcomes[0], ClauseOutcome::Aborted(_)));
    assert!(matches!(outcomes[1], ClauseOutcome::Aborted(_)));
    assert_eq!(d.aborted.iter().map(|a| a.clause).collect::<Vec<_>>(), vec![0, 1]);
    assert_eq!(d.turns[0].len(), 1);
    d.validate().unwrap();
}

#[test]
fn harvest_keeps_grounded_linkings_only() {
    let fx = Fixture::new();
    let (db, cat, emb) = (fx.open(), fx.catalog(), LexicalEmbedder::default());
    let mut d = doc(&[QUESTION]);
    let model = llm(vec![value_in_k(), stop("done")]);
    run_lookup(&mut d, &model, &ctx(&db, &cat, &emb), &default_rules(), 0.7).unwrap();
    let harvest = llm(vec![json!([
        {"kind": "value", "table": "frpm", "column": "Low Grade", "literal": "K", "rationale": "kindergarten is K", "source_turn": [0, 1]},
        {"kind": "value", "table": "frpm", "column": "Low Grade", "literal": "Kindergarten", "rationale": "made up"},
        {"kind": "schema", "table": "frpm", "column": "Grade Span", "rationale": "hallucinated"},
        {"kind": "value", "table": "frpm", "column": "Low Grade", "rationale": "no literal"},
        {"kind": "value", "table": "frpm", "column": "Low Grade", "literal": "K", "rationale": "duplicate"}
    ])
    .to_string()]);
    let linkings = harvest_linkings(&d, &harvest, 0.7);
    assert_eq!(linkings.len(), 1);
    assert_eq!(linkings[0].kind, LinkingKind::Value);
    assert_eq!(linkings[0].literal.as_deref(), Some("K"));
    assert_eq!(linkings[0].source_turn, TurnRef(0, 0));
}

#[test]
fn harvest_skips_the_model_without_facts() {
    let d = doc(&[QUESTION]);
    let model = llm(vec![]);
    assert!(harvest_linkings(&d, &model, 0.7).is_empty());
    assert_eq!(model.call_count(), 0);
}
