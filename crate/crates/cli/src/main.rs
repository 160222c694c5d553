use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use evidencer::eval::{render_table, MetricSelection, OverlapDenominator};
use evidencer_cli::evaluate::{cmd_eval, EvalOptions};
use evidencer_cli::run::{cmd_run, EmbedderChoice, RunOptions, StyleChoice};
use evidencer_cli::stats::cmd_trace_stats;
use evidencer_cli::write_canonical;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "evidencer", version, about = "Generate and evaluate database-grounded evidence for text-to-SQL questions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Denominator {
    Sql,
    Evidence,
}

#[derive(Subcommand)]
enum Command {
    /// Run breakup, lookup and evidence generation for every question.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        db_root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        style: StyleChoice,
        #[arg(long, default_value_t = evidencer::cotf::DEFAULT_MAX_TURNS)]
        max_turns: usize,
        #[arg(long, default_value_t = evidencer::pipeline::DEFAULT_CANDIDATES)]
        candidates: usize,
        /// Replay script instead of a live model.
        #[arg(long)]
        mock_llm: Option<PathBuf>,
        #[arg(long, default_value = "https://api.openai.com/v1")]
        llm_endpoint: String,
        #[arg(long, default_value = "gpt-4o")]
        model: String,
        /// Concurrent model requests across all workers.
        #[arg(long, default_value_t = 4)]
        max_in_flight: usize,
        #[arg(long, value_enum, default_value = "lexical")]
        embedder: EmbedderChoice,
        #[arg(long)]
        embed_endpoint: Option<String>,
        #[arg(long)]
        embed_model: Option<String>,
        /// Concise-style examples replacing the bundled ones.
        #[arg(long)]
        shots: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Recompute questions that already have outputs.
        #[arg(long)]
        force: bool,
    },
    /// Score predicted SQL against the dataset's gold SQL.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// JSON map of question_id to predicted SQL.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        db_root: PathBuf,
        /// Comma-separated subset of ex,ves,f1,overlap.
        #[arg(long, default_value = "ex,ves,f1,overlap")]
        metrics: String,
        /// JSON map of question_id to evidence text for the overlap metric.
        #[arg(long)]
        evidence: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "sql")]
        overlap_denominator: Denominator,
        #[arg(long, default_value_t = 10)]
        ves_iterations: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Where to write the JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Tool-call distribution and turn counts over saved traces.
    TraceStats {
        dir: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Run {
            dataset,
            db_root,
            out,
            style,
            max_turns,
            candidates,
            mock_llm,
            llm_endpoint,
            model,
            max_in_flight,
            embedder,
            embed_endpoint,
            embed_model,
            shots,
            seed,
            jobs,
            force,
        } => {
            let opts = RunOptions {
                style,
                max_turns,
                candidates,
                mock_llm,
                llm_endpoint,
                model,
                max_in_flight,
                embedder,
                embed_endpoint,
                embed_model,
                shots,
                seed,
                jobs,
                force,
                ..RunOptions::new(dataset, db_root, &out)
            };
            let summary = cmd_run(&opts)?;
            print!("{}", summary.render());
            write_canonical(&out.join("run_summary.json"), &summary)?;
            Ok(summary.failed == 0)
        }
        Command::Eval {
            dataset,
            predictions,
            db_root,
            metrics,
            evidence,
            overlap_denominator,
            ves_iterations,
            jobs,
            report,
        } => {
            let metrics = MetricSelection::parse(&metrics).map_err(anyhow::Error::msg)?;
            let opts = EvalOptions {
                metrics,
                evidence,
                overlap_denominator: match overlap_denominator {
                    Denominator::Sql => OverlapDenominator::Sql,
                    Denominator::Evidence => OverlapDenominator::Evidence,
                },
                ves_iterations,
                jobs,
                ..EvalOptions::new(dataset, predictions, db_root)
            };
            let r = cmd_eval(&opts)?;
            print!("{}", render_table(&r));
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            let json = serde_json::to_string_pretty(&r)?;
            match report {
                Some(path) => std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?,
                None => println!("{json}"),
            }
            Ok(true)
        }
        Command::TraceStats { dir, json } => {
            let stats = cmd_trace_stats(&dir)?;
            print!("{}", stats.render());
            match json {
                Some(path) => write_canonical(&path, &stats)?,
                None => println!("{}", serde_json::to_string_pretty(&stats)?),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
