mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use common::*;
use evidencer::cotf::{CotfDocument, Evidence};
use evidencer::eval::MetricSelection;
use evidencer_cli::evaluate::{cmd_eval, EvalOptions};
use evidencer_cli::run::{cmd_run, RunOptions};
use evidencer_cli::stats::cmd_trace_stats;
use serde_json::json;

fn options(fx: &Fixture, out: &Path, candidates: usize) -> RunOptions {
    let (dataset, script) = write_inputs(fx, candidates);
    RunOptions { mock_llm: Some(script), candidates, ..RunOptions::new(dataset, fx.root(), out) }
}

fn script_len(candidates: usize) -> usize {
    session_q1(candidates).len() + session_q2(candidates).len() + session_q3(candidates).len()
}

fn read_map(path: &Path) -> BTreeMap<String, String> {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn run_writes_one_trace_and_evidence_per_question() {
    let fx = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    let summary = cmd_run(&options(&fx, out.path(), 3)).unwrap();
    assert_eq!((summary.questions, summary.completed, summary.failed, summary.skipped), (3, 3, 0, 0));
    assert_eq!(summary.llm_calls, script_len(3));
    assert_eq!(summary.aborted_clauses, 0);
    for qid in ["1", "2", "3"] {
        let doc = CotfDocument::from_json(&std::fs::read(out.path().join("traces").join(format!("{qid}.json"))).unwrap()).unwrap();
        assert_eq!(doc.question.question_id, qid);
        for style in ["long", "concise"] {
            let ev: Evidence =
                serde_json::from_slice(&std::fs::read(out.path().join(format!("evidence/{qid}.{style}.json"))).unwrap()).unwrap();
            assert_eq!(ev.candidate_count, 3);
            assert!(!ev.text.is_empty());
        }
    }
    let long = read_map(&out.path().join("evidence_long.json"));
    let concise = read_map(&out.path().join("evidence_concise.json"));
    assert_eq!(long.keys().collect::<Vec<_>>(), ["1", "2", "3"]);
    assert_eq!(concise.len(), 3);
    assert!(!long["2"].contains("MathAverage"), "{}", long["2"]);
    assert!(long["2"].contains("AvgScrMath"));
    assert_eq!(std::fs::read(out.path().join("errors.json")).unwrap(), b"[]");
}

#[test]
fn trace_stats_match_a_hand_tally() {
    let fx = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    cmd_run(&options(&fx, out.path(), 3)).unwrap();
    let s = cmd_trace_stats(out.path()).unwrap();
    assert_eq!((s.traces, s.clauses, s.turns), (3, 5, 15));
    assert!((s.mean_turns_per_clause - 3.0).abs() < 1e-12);
    assert_eq!(s.max_turns_per_clause, 5);
    let expected: BTreeMap<&str, usize> =
        [("value_in", 5), ("uniq_value", 2), ("none", 5), ("sim_columns", 1), ("head", 1), ("sim_value_in", 1)].into();
    for (tool, n) in &s.tool_calls {
        assert_eq!(*n, expected.get(tool.as_str()).copied().unwrap_or(0), "{tool}");
    }
    assert_eq!(s.feedback["corrective"], 1);
    assert_eq!(s.feedback["guiding"], 1);
    assert_eq!(s.feedback["standard"], 13);
    assert!(s.warnings.is_empty());
}

#[test]
fn trace_stats_on_an_empty_directory_are_zero() {
    let dir = tempfile::tempdir().unwrap();
    let s = cmd_trace_stats(dir.path()).unwrap();
    assert_eq!((s.traces, s.clauses, s.turns, s.max_turns_per_clause), (0, 0, 0, 0));
    assert_eq!(s.mean_turns_per_clause, 0.0);
    assert!(s.tool_calls.values().all(|n| *n == 0));
    assert!(s.tool_calls.contains_key("sim_value_in"));
}

#[test]
fn trace_stats_skip_corrupt_traces() {
    let fx = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    cmd_run(&options(&fx, out.path(), 1)).unwrap();
    std::fs::write(out.path().join("traces/broken.json"), b"{not json").unwrap();
    let s = cmd_trace_stats(out.path()).unwrap();
    assert_eq!(s.traces, 3);
    assert_eq!(s.warnings.len(), 1);
}

#[test]
fn rerun_without_force_reuses_outputs() {
    let fx = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    let opts = options(&fx, out.path(), 3);
    cmd_run(&opts).unwrap();
    let before = snapshot(out.path());
    let again = cmd_run(&opts).unwrap();
    assert_eq!((again.skipped, again.completed, again.llm_calls), (3, 0, 0));
    assert_eq!(snapshot(out.path()), before);
}

#[test]
fn force_recomputes_identically() {
    let fx = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    let opts = options(&fx, out.path(), 3);
    cmd_run(&opts).unwrap();
    let before = snapshot(out.path());
    let again = cmd_run(&RunOptions { force: true, ..opts }).unwrap();
    assert_eq!(again.completed, 3);
    assert_eq!(snapshot(out.path()), before);
}

#[test]
fn replay_file_reproduces_the_run() {
    let fx = Fixture::new();
    let first = tempfile::tempdir().unwrap();
    let opts = options(&fx, first.path(), 2);
    cmd_run(&opts).unwrap();
    let second = tempfile::tempdir().unwrap();
    let replay = RunOptions {
        mock_llm: Some(first.path().join("replay.json")),
        out_dir: second.path().to_path_buf(),
        ..opts
    };
    cmd_run(&replay).unwrap();
    assert_eq!(snapshot(first.path()), snapshot(second.path()));
}

#[test]
fn single_candidate_skips_the_merge_call() {
    let fx = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    let summary = cmd_run(&options(&fx, out.path(), 1)).unwrap();
    assert_eq!(summary.llm_calls, script_len(1));
    assert_eq!(script_len(3) - script_len(1), 3 * 2 * 3);
}

fn run_binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_evidencer")).args(args).output().expect("spawn evidencer")
}

#[test]
fn missing_database_fails_one_question_and_the_rest_complete() {
    let fx = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    let (dataset, script) = write_inputs(&fx, 3);
    let mut records = records();
    records.as_array_mut().unwrap().push(json!({"question_id": 4, "db_id": "missing_db", "question": "How many rows?"}));
    std::fs::write(&dataset, serde_json::to_vec(&records).unwrap()).unwrap();
    let o = run_binary(&[
        "run",
        "--dataset",
        dataset.to_str().unwrap(),
        "--db-root",
        fx.root().to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--mock-llm",
        script.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let errors: serde_json::Value = serde_json::from_slice(&std::fs::read(out.path().join("errors.json")).unwrap()).unwrap();
    assert_eq!(errors.as_array().unwrap().len(), 1);
    assert_eq!(errors[0]["question_id"], "4");
    assert_eq!(errors[0]["db_id"], "missing_db");
    assert_eq!(read_map(&out.path().join("evidence_long.json")).len(), 3);
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.path().join("run_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["completed"], 3);
    assert_eq!(summary["failed"], 1);
}

#[test]
fn missing_replay_session_is_a_question_failure() {
    let fx = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    let (dataset, _) = write_inputs(&fx, 3);
    let script = fx.root().join("partial.json");
    std::fs::write(&script, serde_json::to_vec(&json!({"sessions": {"1": session_q1(3)}})).unwrap()).unwrap();
    let summary = cmd_run(&RunOptions { mock_llm: Some(script), ..RunOptions::new(dataset, fx.root(), out.path()) }).unwrap();
    assert_eq!((summary.completed, summary.failed), (1, 2));
}

#[test]
fn bad_arguments_are_hard_errors() {
    let o = run_binary(&["run", "--dataset", "/nonexistent.json", "--db-root", "/nonexistent", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(2));
    let fx = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    let err = cmd_run(&RunOptions { max_turns: 0, ..options(&fx, out.path(), 3) }).unwrap_err();
    assert!(err.to_string().contains("max-turns"));
}

fn write_predictions(fx: &Fixture, preds: &[(&str, &str)]) -> std::path::PathBuf {
    let path = fx.root().join("pred.json");
    let map: BTreeMap<&str, &str> = preds.iter().copied().collect();
    std::fs::write(&path, serde_json::to_vec(&map).unwrap()).unwrap();
    path
}

fn gold(i: usize) -> String {
    records()[i]["SQL"].as_str().unwrap().to_string()
}

#[test]
fn eval_of_gold_predictions_is_perfect() {
    let fx = Fixture::new();
    let (dataset, _) = write_inputs(&fx, 3);
    let (g1, g2, g3) = (gold(0), gold(1), gold(2));
    let preds = write_predictions(&fx, &[("1", &g1), ("2", &g2), ("3", &g3)]);
    let r = cmd_eval(&EvalOptions { ves_iterations: 3, ..EvalOptions::new(dataset, preds, fx.root()) }).unwrap();
    assert_eq!(r.overall.samples, 3);
    assert_eq!(r.overall.ex, Some(1.0));
    assert!(r.overall.ves.unwrap() > 0.5);
    assert_eq!(r.overall.schema_f1.unwrap().f1, 1.0);
    // Question 2 has no literals, and an empty gold set scores 0.
    assert!((r.overall.value_f1.unwrap().f1 - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(r.by_difficulty["simple"].samples, 2);
    assert_eq!(r.by_difficulty["moderate"].samples, 1);
    assert!(r.warnings.is_empty(), "{:?}", r.warnings);
}

#[test]
fn eval_counts_missing_and_wrong_predictions() {
    let fx = Fixture::new();
    let mut records = records();
    records.as_array_mut().unwrap().truncate(2);
    let dataset = fx.root().join("two.json");
    std::fs::write(&dataset, serde_json::to_vec(&records).unwrap()).unwrap();
    let g1 = gold(0);
    let preds = write_predictions(&fx, &[("1", &g1), ("9", "SELECT 1")]);
    let r = cmd_eval(&EvalOptions { ves_iterations: 3, ..EvalOptions::new(&dataset, &preds, fx.root()) }).unwrap();
    assert_eq!(r.overall.ex, Some(0.5));
    assert!(r.warnings.iter().any(|w| w.contains("unknown question 9")));
    assert!(r.warnings.iter().any(|w| w.contains("question 2 has no prediction")));

    let wrong = write_predictions(&fx, &[("1", &g1), ("2", "SELECT Phone FROM schools ORDER BY Phone DESC LIMIT 1")]);
    let r = cmd_eval(&EvalOptions { ves_iterations: 3, ..EvalOptions::new(&dataset, &wrong, fx.root()) }).unwrap();
    assert_eq!(r.overall.ex, Some(0.5));
}

#[test]
fn eval_metric_subset_omits_the_rest() {
    let fx = Fixture::new();
    let (dataset, _) = write_inputs(&fx, 3);
    let g1 = gold(0);
    let preds = write_predictions(&fx, &[("1", &g1)]);
    let opts = EvalOptions { metrics: MetricSelection::parse("f1").unwrap(), ..EvalOptions::new(dataset, preds, fx.root()) };
    let r = cmd_eval(&opts).unwrap();
    assert!(r.overall.ex.is_none() && r.overall.ves.is_none() && r.overall.overlap.is_none());
    assert!(r.overall.schema_f1.is_some());
    let json = serde_json::to_value(&r).unwrap();
    assert!(json.get("ex").is_none() && json.get("ves").is_none());
}

#[test]
fn eval_binary_writes_a_report() {
    let fx = Fixture::new();
    let (dataset, _) = write_inputs(&fx, 3);
    let (g1, g2, g3) = (gold(0), gold(1), gold(2));
    let preds = write_predictions(&fx, &[("1", &g1), ("2", &g2), ("3", &g3)]);
    let report = fx.root().join("report.json");
    let o = run_binary(&[
        "eval",
        "--dataset",
        dataset.to_str().unwrap(),
        "--predictions",
        preds.to_str().unwrap(),
        "--db-root",
        fx.root().to_str().unwrap(),
        "--metrics",
        "ex,overlap",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["ex"], 1.0);
    assert!(r.get("ves").is_none());
    assert!(r["overlap"].is_object());
}

#[test]
fn trace_stats_binary_writes_json() {
    let fx = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    cmd_run(&options(&fx, out.path(), 1)).unwrap();
    let json = out.path().join("stats.json");
    let o = run_binary(&["trace-stats", out.path().to_str().unwrap(), "--json", json.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(s["turns"], 15);
    assert!(String::from_utf8_lossy(&o.stdout).contains("sim_value_in"));
}
