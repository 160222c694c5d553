//! `eval`: EX, VES, linking F1 and evidence/SQL overlap for a predictions file.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::Context;
use evidencer::cotf::Question;
use evidencer::dataset::{load_dataset, DbLayout};
use evidencer::db::{catalog, SchemaCatalog, SqliteDatabase};
use evidencer::eval::{
    ex_outcome, extract_entities, linking_f1, report, token_overlap, ves_sample, ExOutcome, MetricReport,
    MetricSelection, OverlapDenominator, SampleScore,
};
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub dataset: PathBuf,
    pub predictions: PathBuf,
    pub db_root: PathBuf,
    pub metrics: MetricSelection,
    /// Evidence map used for the overlap metric; defaults to the dataset's own evidence.
    pub evidence: Option<PathBuf>,
    pub overlap_denominator: OverlapDenominator,
    pub ves_iterations: usize,
    pub jobs: usize,
}

impl EvalOptions {
    pub fn new(dataset: impl Into<PathBuf>, predictions: impl Into<PathBuf>, db_root: impl Into<PathBuf>) -> Self {
        EvalOptions {
            dataset: dataset.into(),
            predictions: predictions.into(),
            db_root: db_root.into(),
            metrics: MetricSelection::ALL,
            evidence: None,
            overlap_denominator: OverlapDenominator::Sql,
            ves_iterations: 10,
            jobs: 1,
        }
    }
}

fn read_map(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("{} is not a JSON map of strings", path.display()))
}

struct Sample<'a> {
    question: &'a Question,
    gold: &'a str,
    pred: Option<&'a str>,
}

/// Opens each database once; failures are remembered per db_id.
fn open_all(layout: &DbLayout, samples: &[Sample<'_>]) -> BTreeMap<String, Result<(PathBuf, SchemaCatalog), String>> {
    let mut out = BTreeMap::new();
    for s in samples {
        let db_id = &s.question.db_id;
        if out.contains_key(db_id) {
            continue;
        }
        let path = layout.database(db_id);
        let opened = SqliteDatabase::open(&path)
            .and_then(|db| catalog(&db, layout.descriptions(db_id).as_deref()))
            .map(|cat| (path, cat))
            .map_err(|e| e.to_string());
        out.insert(db_id.clone(), opened);
    }
    out
}

fn score(
    s: &Sample<'_>,
    dbs: &BTreeMap<String, Result<(PathBuf, SchemaCatalog), String>>,
    evidence: &BTreeMap<String, String>,
    opts: &EvalOptions,
    timed: bool,
) -> SampleScore {
    let q = s.question;
    let mut out = SampleScore {
        question_id: q.question_id.clone(),
        difficulty: q.difficulty.map(|d| d.as_str().to_string()),
        ex: None,
        ves: None,
        f1: None,
        overlap: None,
    };
    let opened = &dbs[&q.db_id];
    if opts.metrics.overlap {
        let text = evidence.get(&q.question_id).map(String::as_str).or(q.expert_evidence.as_deref()).unwrap_or("");
        out.overlap = Some(token_overlap(text, s.gold, opts.overlap_denominator));
    }
    if opts.metrics.f1 {
        let cat = opened.as_ref().ok().map(|(_, c)| c);
        let predicted = s.pred.map(|p| extract_entities(p, cat)).unwrap_or_default();
        out.f1 = Some(linking_f1(&extract_entities(s.gold, cat), &predicted));
    }
    if !(opts.metrics.ex || opts.metrics.ves) {
        return out;
    }
    let (ex, ves) = match (opened, s.pred) {
        (Err(e), _) => (ExOutcome::GoldError(e.clone()), None),
        (Ok(_), None) => (ExOutcome::PredError("missing prediction".into()), Some(0.0)),
        (Ok((path, _)), Some(pred)) => match SqliteDatabase::open(path) {
            Err(e) => (ExOutcome::GoldError(e.to_string()), None),
            Ok(db) if timed => {
                let sample = ves_sample(&db, pred, s.gold, opts.ves_iterations.max(3));
                (sample.outcome, Some(sample.reward))
            }
            Ok(db) => (ex_outcome(&db, pred, s.gold), None),
        },
    };
    out.ves = if matches!(ex, ExOutcome::GoldError(_)) { None } else { ves };
    out.ex = Some(ex);
    out
}

pub fn cmd_eval(opts: &EvalOptions) -> anyhow::Result<MetricReport> {
    let questions = load_dataset(&opts.dataset)?;
    let predictions = read_map(&opts.predictions)?;
    let evidence = match &opts.evidence {
        Some(p) => read_map(p)?,
        None => BTreeMap::new(),
    };
    let mut warnings = Vec::new();
    let known: HashSet<&str> = questions.iter().map(|q| q.question_id.as_str()).collect();
    for id in predictions.keys().filter(|id| !known.contains(id.as_str())) {
        warnings.push(format!("prediction for unknown question {id} ignored"));
    }
    let mut samples = Vec::new();
    for q in &questions {
        let Some(gold) = q.gold_sql.as_deref() else {
            warnings.push(format!("question {} has no gold SQL; skipped", q.question_id));
            continue;
        };
        let pred = predictions.get(&q.question_id).map(String::as_str);
        if pred.is_none() {
            warnings.push(format!("question {} has no prediction; counted as a mismatch", q.question_id));
        }
        samples.push(Sample { question: q, gold, pred });
    }
    let layout = DbLayout::new(&opts.db_root);
    let dbs = open_all(&layout, &samples);
    for (db_id, r) in &dbs {
        if let Err(e) = r {
            warnings.push(format!("database {db_id} unavailable: {e}"));
        }
    }
    // Untimed metrics in parallel, then timing on a single thread.
    let untimed = EvalOptions { metrics: MetricSelection { ves: false, ..opts.metrics }, ..opts.clone() };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.jobs.max(1)).build()?;
    let mut scores: Vec<SampleScore> =
        pool.install(|| samples.par_iter().map(|s| score(s, &dbs, &evidence, &untimed, false)).collect());
    if opts.metrics.ves {
        let timed_only = EvalOptions {
            metrics: MetricSelection { ex: false, ves: true, f1: false, overlap: false },
            ..opts.clone()
        };
        for (s, out) in samples.iter().zip(scores.iter_mut()) {
            let timed = score(s, &dbs, &evidence, &timed_only, true);
            out.ves = timed.ves;
            if out.ex.is_none() {
                out.ex = timed.ex;
            }
        }
    }
    for s in &scores {
        if let Some(ExOutcome::GoldError(e)) = &s.ex {
            warnings.push(format!("gold SQL of question {} failed and is skipped: {e}", s.question_id));
        }
    }
    Ok(report(&scores, opts.metrics, warnings))
}
