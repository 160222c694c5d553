//! The lookup toolbox: atomic database probes and their dispatcher.
//!
//! Every probe returns a typed result that is recorded verbatim as the
//! `result` payload of a standard feedback. Failures never escape
//! [`dispatch`]; they come back as corrective feedback carrying the engine's
//! own error text.

mod probes;
mod spec;

pub use probes::{
    head, if_null, info, random, sim_columns, sim_value_in, uniq_value, value_in, ColumnMeta, InfoResult,
    NullResult, RowsResult, ScoredColumn, ScoredValue, SimColumnsResult, SimValueResult, ToolError,
    UniqValueResult, ValueInResult, SIM_POOL_PREFILTER, SIM_POOL_THRESHOLD,
};
pub use spec::{
    guidance, registry, render_guidance, spec_for, validate_call, GuidanceError, ParamSpec, ParamType, ToolSpec,
    DEFAULT_SAMPLE_ROWS, DEFAULT_SIM_K, DEFAULT_UNIQ_LIMIT,
};

use serde::Serialize;
use serde_json::Value as Json;
use sha2::{Digest, Sha256};

use crate::canonical::to_canonical_bytes;
use crate::cotf::{ToolCall, ToolFeedback, ToolKind};
use crate::db::{Database, SchemaCatalog};
use crate::embed::Embedder;

/// Where `random` gets its seed when the call does not carry one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedPolicy {
    /// Derived from this base seed and the call itself.
    Fixed(u64),
    /// Drawn from the OS; the drawn seed is recorded in the result.
    Live,
}

impl SeedPolicy {
    pub fn seed_for(self, call: &ToolCall) -> u64 {
        match self {
            SeedPolicy::Fixed(base) => {
                let payload = serde_json::to_value(call).expect("calls serialize");
                let mut h = Sha256::new();
                h.update(base.to_le_bytes());
                h.update(to_canonical_bytes(&payload));
                let digest = h.finalize();
                u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
            }
            SeedPolicy::Live => rand::random(),
        }
    }
}

pub struct ToolContext<'a> {
    pub db: &'a dyn Database,
    pub catalog: &'a SchemaCatalog,
    pub embedder: &'a dyn Embedder,
    pub seed: SeedPolicy,
}

fn arg_u64(call: &ToolCall, key: &str, default: u64) -> u64 {
    call.args.get(key).and_then(Json::as_u64).unwrap_or(default)
}

fn arg_str<'c>(call: &'c ToolCall, key: &str) -> &'c str {
    call.str_arg(key).unwrap_or_default()
}

fn standard<T: Serialize>(message: String, result: &T) -> ToolFeedback {
    ToolFeedback::standard(message, serde_json::to_value(result).expect("tool results serialize"))
}

/// Runs one call. Total: every outcome is standard or corrective feedback.
pub fn dispatch(call: &ToolCall, ctx: &ToolContext<'_>) -> ToolFeedback {
    if let Err(e) = validate_call(call) {
        return ToolFeedback::corrective(e);
    }
    let kind = call.kind().expect("validated");
    let outcome = run(kind, call, ctx);
    match outcome {
        Ok(feedback) => feedback,
        Err(e) => ToolFeedback::corrective(format!("{kind} failed: {e}")),
    }
}

fn run(kind: ToolKind, call: &ToolCall, ctx: &ToolContext<'_>) -> Result<ToolFeedback, ToolError> {
    let table = arg_str(call, "table");
    let column = arg_str(call, "column");
    Ok(match kind {
        ToolKind::ValueIn => {
            let r = value_in(ctx.db, ctx.catalog, table, column, &call.args["value"])?;
            let msg = if r.exists {
                format!("{} occurs in {}.{} ({} rows)", r.value, r.table, r.column, r.match_count)
            } else {
                format!("{} does not occur in {}.{}", r.value, r.table, r.column)
            };
            standard(msg, &r)
        }
        ToolKind::SimValueIn => {
            let k = arg_u64(call, "k", DEFAULT_SIM_K) as usize;
            let r = sim_value_in(ctx.db, ctx.catalog, ctx.embedder, table, column, arg_str(call, "value"), k)?;
            standard(format!("{} similar values from {}.{}", r.candidates.len(), r.table, r.column), &r)
        }
        ToolKind::UniqValue => {
            let limit = arg_u64(call, "limit", DEFAULT_UNIQ_LIMIT) as usize;
            let r = uniq_value(ctx.db, ctx.catalog, table, column, limit)?;
            standard(
                format!("{}.{} has {} distinct values; showing {}", r.table, r.column, r.distinct_count, r.samples.len()),
                &r,
            )
        }
        ToolKind::Head => {
            let n = arg_u64(call, "n", DEFAULT_SAMPLE_ROWS) as usize;
            let r = head(ctx.db, ctx.catalog, table, n)?;
            standard(format!("first {} rows of {}", r.rows.len(), r.table), &r)
        }
        ToolKind::Random => {
            let n = arg_u64(call, "n", DEFAULT_SAMPLE_ROWS) as usize;
            let seed = call.args.get("seed").and_then(Json::as_u64).unwrap_or_else(|| ctx.seed.seed_for(call));
            let r = random(ctx.db, ctx.catalog, table, n, seed)?;
            standard(format!("{} random rows of {} (seed {seed})", r.rows.len(), r.table), &r)
        }
        ToolKind::IfNull => {
            let r = if_null(ctx.db, ctx.catalog, table, column)?;
            standard(format!("{}.{}: {} of {} rows are NULL", r.table, r.column, r.null_count, r.total), &r)
        }
        ToolKind::Info => {
            let r = info(ctx.db, ctx.catalog, table, call.str_arg("column"))?;
            standard(format!("metadata for {} column(s) of {}", r.columns.len(), r.table), &r)
        }
        ToolKind::SimColumns => {
            let k = arg_u64(call, "k", DEFAULT_SIM_K) as usize;
            let r = sim_columns(ctx.catalog, ctx.embedder, arg_str(call, "query"), k);
            standard(format!("{} related columns", r.columns.len()), &r)
        }
        ToolKind::None => ToolFeedback::empty_standard(),
    })
}
