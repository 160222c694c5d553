//! Execution accuracy, valid efficiency score, linking F1 and evidence/SQL
//! token overlap.

mod lexer;
pub mod sql;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::db::{Database, DbError, SqlValue};
pub use sql::{extract_entities, extract_entities_bytes, has_top_level_order_by, normalize_number, parse, LinkingSets};

/// A result cell with a total order, used to compare row multisets.
#[derive(Debug, Clone)]
enum Cell {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    fn from_value(v: &SqlValue) -> Cell {
        match v {
            SqlValue::Null => Cell::Null,
            SqlValue::Integer(i) => Cell::Int(*i),
            SqlValue::Real(r) if r.fract() == 0.0 && r.abs() < 9.0e15 => Cell::Int(*r as i64),
            SqlValue::Real(r) => Cell::Real(*r),
            SqlValue::Text(s) => Cell::Text(s.clone()),
            SqlValue::Blob(b) => Cell::Blob(b.clone()),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Cell::Null => 0,
            Cell::Int(_) => 1,
            Cell::Real(_) => 2,
            Cell::Text(_) => 3,
            Cell::Blob(_) => 4,
        }
    }
}

impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Cell::Int(a), Cell::Int(b)) => a.cmp(b),
            (Cell::Real(a), Cell::Real(b)) => a.total_cmp(b),
            (Cell::Text(a), Cell::Text(b)) => a.cmp(b),
            (Cell::Blob(a), Cell::Blob(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cell {}

fn rows_of(db: &dyn Database, sql: &str) -> Result<Vec<Vec<Cell>>, DbError> {
    let rs = db.query(sql, &[])?;
    Ok(rs.rows.iter().map(|r| r.iter().map(Cell::from_value).collect()).collect())
}

fn same_results(mut pred: Vec<Vec<Cell>>, mut gold: Vec<Vec<Cell>>, ordered: bool) -> bool {
    if !ordered {
        pred.sort();
        gold.sort();
    }
    pred == gold
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "detail", rename_all = "snake_case")]
pub enum ExOutcome {
    Match,
    Mismatch,
    /// The prediction did not execute; counts as a mismatch.
    PredError(String),
    /// The gold query did not execute; the sample is skipped.
    GoldError(String),
}

impl ExOutcome {
    pub fn is_match(&self) -> bool {
        matches!(self, ExOutcome::Match)
    }
}

/// Compares result rows as multisets, or as sequences when the gold query
/// has a top-level `ORDER BY`. Integral reals compare equal to integers.
pub fn ex_outcome(db: &dyn Database, pred_sql: &str, gold_sql: &str) -> ExOutcome {
    let gold = match rows_of(db, gold_sql) {
        Ok(rows) => rows,
        Err(e) => return ExOutcome::GoldError(e.to_string()),
    };
    let pred = match rows_of(db, pred_sql) {
        Ok(rows) => rows,
        Err(e) => return ExOutcome::PredError(e.to_string()),
    };
    if same_results(pred, gold, has_top_level_order_by(gold_sql)) {
        ExOutcome::Match
    } else {
        ExOutcome::Mismatch
    }
}

pub fn ex_match(db: &dyn Database, pred_sql: &str, gold_sql: &str) -> bool {
    ex_outcome(db, pred_sql, gold_sql).is_match()
}

/// Mean of the timings after dropping one minimum and one maximum.
pub fn trimmed_mean(samples: &[Duration]) -> Duration {
    let mut s = samples.to_vec();
    s.sort();
    let core = if s.len() > 2 { &s[1..s.len() - 1] } else { &s[..] };
    if core.is_empty() {
        return Duration::ZERO;
    }
    core.iter().sum::<Duration>() / core.len() as u32
}

fn time_once(db: &dyn Database, sql: &str) -> Duration {
    let start = Instant::now();
    let _ = db.query(sql, &[]);
    start.elapsed()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesSample {
    pub outcome: ExOutcome,
    /// `sqrt(gold_time / pred_time)` for matches, 0 otherwise.
    pub reward: f64,
    pub gold_time_us: f64,
    pub pred_time_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesReport {
    pub ves: f64,
    pub ex: f64,
    /// Samples counted; gold failures are excluded.
    pub evaluated: usize,
    pub samples: Vec<VesSample>,
}

/// Reward for one pair. Runs alternate between gold and prediction after a
/// warm-up of each, and each side is timed `iterations` times.
pub fn ves_sample(db: &dyn Database, pred_sql: &str, gold_sql: &str, iterations: usize) -> VesSample {
    let outcome = ex_outcome(db, pred_sql, gold_sql);
    if !outcome.is_match() {
        return VesSample { outcome, reward: 0.0, gold_time_us: 0.0, pred_time_us: 0.0 };
    }
    let mut gold = Vec::with_capacity(iterations);
    let mut pred = Vec::with_capacity(iterations);
    for i in 0..iterations {
        if i % 2 == 0 {
            gold.push(time_once(db, gold_sql));
            pred.push(time_once(db, pred_sql));
        } else {
            pred.push(time_once(db, pred_sql));
            gold.push(time_once(db, gold_sql));
        }
    }
    let g = trimmed_mean(&gold).as_secs_f64();
    let p = trimmed_mean(&pred).as_secs_f64().max(1e-9);
    VesSample { outcome, reward: (g / p).sqrt(), gold_time_us: g * 1e6, pred_time_us: p * 1e6 }
}

/// Mean reward over pairs `(pred, gold)`; `iterations` is raised to at least 3.
pub fn ves(db: &dyn Database, pairs: &[(String, String)], iterations: usize) -> VesReport {
    let iterations = iterations.max(3);
    let samples: Vec<VesSample> = pairs.iter().map(|(p, g)| ves_sample(db, p, g, iterations)).collect();
    summarize_ves(samples)
}

pub fn summarize_ves(samples: Vec<VesSample>) -> VesReport {
    let counted: Vec<&VesSample> = samples.iter().filter(|s| !matches!(s.outcome, ExOutcome::GoldError(_))).collect();
    let n = counted.len();
    let mean = |f: &dyn Fn(&VesSample) -> f64| if n == 0 { 0.0 } else { counted.iter().map(|s| f(s)).sum::<f64>() / n as f64 };
    let ves = mean(&|s| s.reward);
    let ex = mean(&|s| if s.outcome.is_match() { 1.0 } else { 0.0 });
    VesReport { ves, ex, evaluated: n, samples }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of `predicted` against `golden`; each is 0 when
/// its denominator is empty.
pub fn prf(golden: &BTreeSet<String>, predicted: &BTreeSet<String>) -> Prf {
    let hits = golden.intersection(predicted).count() as f64;
    let precision = if predicted.is_empty() { 0.0 } else { hits / predicted.len() as f64 };
    let recall = if golden.is_empty() { 0.0 } else { hits / golden.len() as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Prf { precision, recall, f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkingF1 {
    pub schema: Prf,
    pub value: Prf,
}

pub fn linking_f1(golden: &LinkingSets, predicted: &LinkingSets) -> LinkingF1 {
    LinkingF1 {
        schema: prf(&golden.schema_entities, &predicted.schema_entities),
        value: prf(&golden.value_entities, &predicted.value_entities),
    }
}

/// Lowercase words excluded from the SQL side of the overlap.
pub const SQL_KEYWORDS: &[&str] = &[
    "all", "and", "as", "asc", "avg", "between", "by", "case", "cast", "count", "cross", "desc", "distinct", "else",
    "end", "except", "exists", "from", "full", "group", "having", "iif", "in", "inner", "integer", "intersect",
    "is", "join", "left", "like", "limit", "max", "min", "not", "null", "offset", "on", "or", "order", "outer",
    "real", "right", "select", "sum", "text", "then", "union", "using", "when", "where", "with",
];

/// Lowercased maximal runs of alphanumeric characters.
pub fn alnum_tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapDenominator {
    /// Fraction of the query's non-keyword tokens found in the evidence.
    #[default]
    Sql,
    /// Fraction of the evidence tokens found among the query's tokens.
    Evidence,
}

pub fn token_overlap(evidence: &str, gold_sql: &str, denominator: OverlapDenominator) -> f64 {
    let ev = alnum_tokens(evidence);
    let sql: BTreeSet<String> =
        alnum_tokens(gold_sql).into_iter().filter(|t| !SQL_KEYWORDS.contains(&t.as_str())).collect();
    let hits = ev.intersection(&sql).count() as f64;
    let denom = match denominator {
        OverlapDenominator::Sql => sql.len(),
        OverlapDenominator::Evidence => ev.len(),
    };
    if denom == 0 {
        0.0
    } else {
        hits / denom as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Distribution {
        if values.is_empty() {
            return Distribution::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Distribution { count: n, mean: v.iter().sum::<f64>() / n as f64, median, min: v[0], max: v[n - 1] }
    }
}

/// Which metrics a report covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSelection {
    pub ex: bool,
    pub ves: bool,
    pub f1: bool,
    pub overlap: bool,
}

impl MetricSelection {
    pub const ALL: MetricSelection = MetricSelection { ex: true, ves: true, f1: true, overlap: true };

    /// Parses a comma-separated list such as `ex,f1`.
    pub fn parse(list: &str) -> Result<MetricSelection, String> {
        let mut m = MetricSelection { ex: false, ves: false, f1: false, overlap: false };
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.to_lowercase().as_str() {
                "ex" => m.ex = true,
                "ves" => m.ves = true,
                "f1" => m.f1 = true,
                "overlap" => m.overlap = true,
                other => return Err(format!("unknown metric {other:?}")),
            }
        }
        Ok(m)
    }
}

/// Per-sample inputs already resolved to SQL text and outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub question_id: String,
    #[serde(default)]
    pub difficulty: Option<String>,
    #[serde(default)]
    pub ex: Option<ExOutcome>,
    #[serde(default)]
    pub ves: Option<f64>,
    #[serde(default)]
    pub f1: Option<LinkingF1>,
    #[serde(default)]
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ex: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ves: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema_f1: Option<Prf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value_f1: Option<Prf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlap: Option<Distribution>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(flatten)]
    pub overall: MetricSummary,
    pub by_difficulty: BTreeMap<String, MetricSummary>,
    pub warnings: Vec<String>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn mean_prf(values: &[Prf]) -> Option<Prf> {
    (!values.is_empty()).then(|| {
        let n = values.len() as f64;
        Prf {
            precision: values.iter().map(|p| p.precision).sum::<f64>() / n,
            recall: values.iter().map(|p| p.recall).sum::<f64>() / n,
            f1: values.iter().map(|p| p.f1).sum::<f64>() / n,
        }
    })
}

/// Macro averages over samples. Samples whose gold query failed are left
/// out of EX and VES.
pub fn summarize(scores: &[SampleScore], selection: MetricSelection) -> MetricSummary {
    let counted = |s: &&SampleScore| !matches!(s.ex, Some(ExOutcome::GoldError(_)));
    let f1: Vec<LinkingF1> = scores.iter().filter_map(|s| s.f1).collect();
    let overlaps: Vec<f64> = scores.iter().filter_map(|s| s.overlap).collect();
    MetricSummary {
        samples: scores.len(),
        ex: if selection.ex {
            mean(scores.iter().filter(counted).filter_map(|s| s.ex.as_ref()).map(|o| if o.is_match() { 1.0 } else { 0.0 }))
                .or(Some(0.0))
        } else {
            None
        },
        ves: if selection.ves { mean(scores.iter().filter(counted).filter_map(|s| s.ves)).or(Some(0.0)) } else { None },
        schema_f1: if selection.f1 {
            mean_prf(&f1.iter().map(|f| f.schema).collect::<Vec<_>>()).or(Some(Prf::default()))
        } else {
            None
        },
        value_f1: if selection.f1 {
            mean_prf(&f1.iter().map(|f| f.value).collect::<Vec<_>>()).or(Some(Prf::default()))
        } else {
            None
        },
        overlap: selection.overlap.then(|| Distribution::of(&overlaps)),
    }
}

pub fn report(scores: &[SampleScore], selection: MetricSelection, warnings: Vec<String>) -> MetricReport {
    let mut groups: BTreeMap<String, Vec<SampleScore>> = BTreeMap::new();
    for s in scores {
        if let Some(d) = &s.difficulty {
            groups.entry(d.clone()).or_default().push(s.clone());
        }
    }
    MetricReport {
        overall: summarize(scores, selection),
        by_difficulty: groups.into_iter().map(|(d, g)| (d, summarize(&g, selection))).collect(),
        warnings,
    }
}

fn pct(x: Option<f64>) -> String {
    x.map(|v| format!("{:.2}", v * 100.0)).unwrap_or_else(|| "-".into())
}

/// Plain-text table mirroring the JSON report.
pub fn render_table(report: &MetricReport) -> String {
    let mut rows = vec![("all".to_string(), &report.overall)];
    rows.extend(report.by_difficulty.iter().map(|(d, s)| (d.clone(), s)));
    let mut out = format!(
        "{:<12} {:>7} {:>7} {:>7} {:>9} {:>9} {:>9}\n",
        "split", "n", "EX", "VES", "schemaF1", "valueF1", "overlap"
    );
    for (name, s) in rows {
        out.push_str(&format!(
            "{:<12} {:>7} {:>7} {:>7} {:>9} {:>9} {:>9}\n",
            name,
            s.samples,
            pct(s.ex),
            pct(s.ves),
            pct(s.schema_f1.map(|p| p.f1)),
            pct(s.value_f1.map(|p| p.f1)),
            pct(s.overlap.map(|d| d.mean)),
        ));
    }
    out
}
