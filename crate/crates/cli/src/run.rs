//! `run`: the full pipeline over a dataset, one output file set per question.
//!
//! Layout under the output directory:
//! `traces/<qid>.json`, `evidence/<qid>.<style>.json`,
//! `transcripts/<qid>.json`, `evidence_<style>.json`, `replay.json` and
//! `errors.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use evidencer::cotf::{EvidenceStyle, Question};
use evidencer::dataset::{load_dataset, DbLayout};
use evidencer::db::{catalog, SqliteDatabase};
use evidencer::embed::{Embedder, LexicalEmbedder, RemoteEmbedder};
use evidencer::llm::{ChatBackend, HttpChatBackend, Limiter, LlmClient, ReplayScript, ScriptEntry, API_KEY_ENV};
use evidencer::pipeline::{run_question, PipelineConfig};
use evidencer::prompts::parse_shots;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{file_stem, write_canonical};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StyleChoice {
    Long,
    Concise,
    Both,
}

impl StyleChoice {
    pub fn styles(self) -> Vec<EvidenceStyle> {
        match self {
            StyleChoice::Long => vec![EvidenceStyle::Long],
            StyleChoice::Concise => vec![EvidenceStyle::Concise],
            StyleChoice::Both => vec![EvidenceStyle::Long, EvidenceStyle::Concise],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderChoice {
    Lexical,
    Remote,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub dataset: PathBuf,
    pub db_root: PathBuf,
    pub out_dir: PathBuf,
    pub style: StyleChoice,
    pub max_turns: usize,
    pub candidates: usize,
    pub mock_llm: Option<PathBuf>,
    pub llm_endpoint: String,
    pub model: String,
    pub max_in_flight: usize,
    pub embedder: EmbedderChoice,
    pub embed_endpoint: Option<String>,
    pub embed_model: Option<String>,
    pub shots: Option<PathBuf>,
    pub seed: u64,
    pub jobs: usize,
    pub force: bool,
}

impl RunOptions {
    pub fn new(dataset: impl Into<PathBuf>, db_root: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            dataset: dataset.into(),
            db_root: db_root.into(),
            out_dir: out_dir.into(),
            style: StyleChoice::Both,
            max_turns: evidencer::cotf::DEFAULT_MAX_TURNS,
            candidates: evidencer::pipeline::DEFAULT_CANDIDATES,
            mock_llm: None,
            llm_endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            max_in_flight: 4,
            embedder: EmbedderChoice::Lexical,
            embed_endpoint: None,
            embed_model: None,
            shots: None,
            seed: 0,
            jobs: 1,
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionError {
    pub question_id: String,
    pub db_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub questions: usize,
    pub completed: usize,
    pub skipped: usize,
    pub failed: usize,
    /// Clauses whose lookup ended on a model failure.
    pub aborted_clauses: usize,
    pub llm_calls: usize,
    pub errors: Vec<QuestionError>,
}

impl RunSummary {
    pub fn render(&self) -> String {
        let mut out = format!(
            "questions {}  completed {}  skipped {}  failed {}  aborted clauses {}  model calls {}\n",
            self.questions, self.completed, self.skipped, self.failed, self.aborted_clauses, self.llm_calls
        );
        for e in &self.errors {
            out.push_str(&format!("  {} ({}): {}\n", e.question_id, e.db_id, e.error));
        }
        out
    }
}

enum Outcome {
    Done { calls: usize, aborted: usize },
    Skipped,
    Failed(QuestionError),
}

fn trace_path(out: &Path, qid: &str) -> PathBuf {
    out.join("traces").join(format!("{}.json", file_stem(qid)))
}

fn evidence_path(out: &Path, qid: &str, style: EvidenceStyle) -> PathBuf {
    out.join("evidence").join(format!("{}.{}.json", file_stem(qid), style.as_str()))
}

fn transcript_path(out: &Path, qid: &str) -> PathBuf {
    out.join("transcripts").join(format!("{}.json", file_stem(qid)))
}

enum ModelSource {
    Replay(ReplayScript),
    Live { backend: Arc<dyn ChatBackend>, limiter: Arc<Limiter> },
}

impl ModelSource {
    fn client(&self, question_id: &str) -> anyhow::Result<LlmClient> {
        match self {
            ModelSource::Replay(script) => script
                .session(question_id)
                .map(LlmClient::scripted)
                .ok_or_else(|| anyhow!("replay script has no session for question {question_id}")),
            ModelSource::Live { backend, limiter } => Ok(LlmClient::with_limiter(backend.clone(), limiter.clone())),
        }
    }
}

fn model_source(opts: &RunOptions) -> anyhow::Result<ModelSource> {
    if let Some(path) = &opts.mock_llm {
        return Ok(ModelSource::Replay(ReplayScript::load(path)?));
    }
    let backend = HttpChatBackend::from_env(&opts.llm_endpoint, &opts.model)?;
    Ok(ModelSource::Live { backend: Arc::new(backend), limiter: Arc::new(Limiter::new(opts.max_in_flight)) })
}

fn embedder(opts: &RunOptions) -> anyhow::Result<Box<dyn Embedder>> {
    Ok(match opts.embedder {
        EmbedderChoice::Lexical => Box::new(LexicalEmbedder::default()),
        EmbedderChoice::Remote => {
            let url = opts.embed_endpoint.clone().context("--embedder remote needs --embed-endpoint")?;
            let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.trim().is_empty());
            Box::new(RemoteEmbedder::new(url, key, opts.embed_model.clone()))
        }
    })
}

fn pipeline_config(opts: &RunOptions) -> anyhow::Result<PipelineConfig> {
    let mut config = PipelineConfig {
        max_turns: opts.max_turns,
        candidates: opts.candidates,
        styles: opts.style.styles(),
        seed: Some(opts.seed),
        ..PipelineConfig::default()
    };
    if opts.max_turns == 0 {
        bail!("--max-turns must be positive");
    }
    if opts.candidates == 0 {
        bail!("--candidates must be positive");
    }
    if let Some(path) = &opts.shots {
        let json = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        config.shots = parse_shots(&json)?;
    }
    Ok(config)
}

fn already_done(out: &Path, qid: &str, styles: &[EvidenceStyle]) -> bool {
    trace_path(out, qid).is_file() && styles.iter().all(|s| evidence_path(out, qid, *s).is_file())
}

fn process(
    q: &Question,
    opts: &RunOptions,
    layout: &DbLayout,
    models: &ModelSource,
    embedder: &dyn Embedder,
    config: &PipelineConfig,
) -> Outcome {
    if !opts.force && already_done(&opts.out_dir, &q.question_id, &config.styles) {
        tracing::info!(question = %q.question_id, "trace exists, skipping");
        return Outcome::Skipped;
    }
    let attempt = || -> anyhow::Result<(usize, usize)> {
        let db = SqliteDatabase::open(layout.database(&q.db_id))?;
        let cat = catalog(&db, layout.descriptions(&q.db_id).as_deref())?;
        for w in &cat.warnings {
            tracing::warn!(db = %q.db_id, "{w}");
        }
        let llm = models.client(&q.question_id)?;
        let result = run_question(q, &db, &cat, embedder, &llm, config);
        write_canonical(&transcript_path(&opts.out_dir, &q.question_id), &llm.transcript())?;
        let output = result?;
        for ev in &output.evidence {
            write_canonical(&evidence_path(&opts.out_dir, &q.question_id, ev.style), ev)?;
        }
        let trace = trace_path(&opts.out_dir, &q.question_id);
        std::fs::write(&trace, output.doc.to_canonical_json()).with_context(|| format!("writing {}", trace.display()))?;
        Ok((llm.call_count(), output.doc.aborted.len()))
    };
    match attempt() {
        Ok((calls, aborted)) => Outcome::Done { calls, aborted },
        Err(e) => {
            tracing::error!(question = %q.question_id, "{e:#}");
            Outcome::Failed(QuestionError { question_id: q.question_id.clone(), db_id: q.db_id.clone(), error: format!("{e:#}") })
        }
    }
}

/// Rebuilds the per-style evidence maps and the combined replay script from
/// the per-question files, so resumed runs produce complete outputs.
fn write_aggregates(out: &Path, questions: &[Question], styles: &[EvidenceStyle]) -> anyhow::Result<()> {
    for &style in styles {
        let mut map = BTreeMap::new();
        for q in questions {
            let path = evidence_path(out, &q.question_id, style);
            if let Ok(bytes) = std::fs::read(&path) {
                let ev: evidencer::cotf::Evidence =
                    serde_json::from_slice(&bytes).with_context(|| format!("reading {}", path.display()))?;
                map.insert(q.question_id.clone(), ev.text);
            }
        }
        write_canonical(&out.join(format!("evidence_{}.json", style.as_str())), &map)?;
    }
    let mut sessions = BTreeMap::new();
    for q in questions {
        let path = transcript_path(out, &q.question_id);
        let Ok(bytes) = std::fs::read(&path) else { continue };
        let exchanges: Vec<serde_json::Value> = serde_json::from_slice(&bytes)?;
        let entries: Vec<ScriptEntry> = exchanges
            .iter()
            .filter_map(|e| e.get("response").and_then(|r| r.as_str()))
            .map(|r| ScriptEntry::Positional(r.to_string()))
            .collect();
        sessions.insert(q.question_id.clone(), entries);
    }
    write_canonical(&out.join("replay.json"), &ReplayScript { sessions })
}

pub fn cmd_run(opts: &RunOptions) -> anyhow::Result<RunSummary> {
    if !opts.db_root.is_dir() {
        bail!("database root {} is not a directory", opts.db_root.display());
    }
    let questions = load_dataset(&opts.dataset)?;
    let config = pipeline_config(opts)?;
    let models = model_source(opts)?;
    let embedder = embedder(opts)?;
    let layout = DbLayout::new(&opts.db_root);
    std::fs::create_dir_all(opts.out_dir.join("traces"))?;
    std::fs::create_dir_all(opts.out_dir.join("evidence"))?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.jobs.max(1)).build()?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        questions.par_iter().map(|q| process(q, opts, &layout, &models, embedder.as_ref(), &config)).collect()
    });

    let mut summary = RunSummary {
        questions: questions.len(),
        completed: 0,
        skipped: 0,
        failed: 0,
        aborted_clauses: 0,
        llm_calls: 0,
        errors: Vec::new(),
    };
    for o in outcomes {
        match o {
            Outcome::Done { calls, aborted } => {
                summary.completed += 1;
                summary.llm_calls += calls;
                summary.aborted_clauses += aborted;
            }
            Outcome::Skipped => summary.skipped += 1,
            Outcome::Failed(e) => {
                summary.failed += 1;
                summary.errors.push(e);
            }
        }
    }
    write_canonical(&opts.out_dir.join("errors.json"), &summary.errors)?;
    write_aggregates(&opts.out_dir, &questions, &config.styles)?;
    Ok(summary)
}
