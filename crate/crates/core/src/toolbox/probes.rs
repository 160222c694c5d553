use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::db::{quote_ident, Database, DbError, SchemaCatalog, SqlValue};
use crate::embed::{lexical_top_k, top_k, Embedder, Ranked};

/// Columns with more distinct values than this are pre-filtered lexically
/// before embedding.
pub const SIM_POOL_THRESHOLD: usize = 10_000;
/// Size of the lexical pre-filter pool.
pub const SIM_POOL_PREFILTER: usize = 1_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolError {
    #[error(transparent)]
    Db(#[from] DbError),
    #[error("no such table: {0}")]
    UnknownTable(String),
    #[error("no such column: {column}")]
    UnknownColumn { table: String, column: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn canonical_table(catalog: &SchemaCatalog, table: &str) -> String {
    catalog.table(table).map(|t| t.name.clone()).unwrap_or_else(|| table.to_string())
}

fn canonical_column(catalog: &SchemaCatalog, table: &str, column: &str) -> String {
    catalog.column(table, column).map(|c| c.name.clone()).unwrap_or_else(|| column.to_string())
}

fn count(db: &dyn Database, sql: &str, params: &[SqlValue]) -> Result<u64, ToolError> {
    let rs = db.query(sql, params)?;
    Ok(rs.scalar().and_then(SqlValue::as_i64).unwrap_or(0).max(0) as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueInResult {
    pub table: String,
    pub column: String,
    pub value: Json,
    pub exists: bool,
    pub match_count: u64,
}

/// Exact, case-sensitive membership test.
pub fn value_in(
    db: &dyn Database,
    catalog: &SchemaCatalog,
    table: &str,
    column: &str,
    value: &Json,
) -> Result<ValueInResult, ToolError> {
    let bound = SqlValue::from_json(value)
        .ok_or_else(|| ToolError::InvalidArgument(format!("value must be a scalar, got {value}")))?;
    let sql = format!("SELECT COUNT(*) FROM {} WHERE {} = ?1", quote_ident(table), quote_ident(column));
    let match_count = count(db, &sql, &[bound])?;
    Ok(ValueInResult {
        table: canonical_table(catalog, table),
        column: canonical_column(catalog, table, column),
        value: value.clone(),
        exists: match_count > 0,
        match_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredValue {
    pub value: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimValueResult {
    pub table: String,
    pub column: String,
    pub query: String,
    pub candidates: Vec<ScoredValue>,
    /// `embedding` or `lexical` (fallback when the embedder failed).
    pub scoring: String,
}

fn rank_with_fallback(embedder: &dyn Embedder, query: &str, pool: &[String], k: usize) -> (Vec<Ranked>, String) {
    match top_k(embedder, query, pool, k) {
        Ok(r) => (r, "embedding".to_string()),
        Err(e) => {
            tracing::warn!("embedder {} failed, using lexical scoring: {e}", embedder.name());
            (lexical_top_k(query, pool, k), "lexical".to_string())
        }
    }
}

/// Top-`k` distinct stored values (stringified) most similar to `query`.
pub fn sim_value_in(
    db: &dyn Database,
    catalog: &SchemaCatalog,
    embedder: &dyn Embedder,
    table: &str,
    column: &str,
    query: &str,
    k: usize,
) -> Result<SimValueResult, ToolError> {
    if k == 0 {
        return Err(ToolError::InvalidArgument("k must be at least 1".into()));
    }
    let sql = format!(
        "SELECT DISTINCT CAST({c} AS TEXT) AS v FROM {t} WHERE {c} IS NOT NULL ORDER BY v",
        c = quote_ident(column),
        t = quote_ident(table)
    );
    let values: Vec<String> = db.query(&sql, &[])?.rows.into_iter().map(|r| r[0].to_string()).collect();
    let pool: Vec<String> = if values.len() > SIM_POOL_THRESHOLD {
        let mut keep: Vec<usize> = lexical_top_k(query, &values, SIM_POOL_PREFILTER).into_iter().map(|r| r.index).collect();
        keep.sort_unstable();
        keep.into_iter().map(|i| values[i].clone()).collect()
    } else {
        values
    };
    let (ranked, scoring) = rank_with_fallback(embedder, query, &pool, k);
    Ok(SimValueResult {
        table: canonical_table(catalog, table),
        column: canonical_column(catalog, table, column),
        query: query.to_string(),
        candidates: ranked.into_iter().map(|r| ScoredValue { value: pool[r.index].clone(), score: r.score }).collect(),
        scoring,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniqValueResult {
    pub table: String,
    pub column: String,
    pub distinct_count: u64,
    pub samples: Vec<Json>,
}

/// Distinct count plus the first `limit` non-NULL distinct values, ascending by
/// their text form.
pub fn uniq_value(
    db: &dyn Database,
    catalog: &SchemaCatalog,
    table: &str,
    column: &str,
    limit: usize,
) -> Result<UniqValueResult, ToolError> {
    let (t, c) = (quote_ident(table), quote_ident(column));
    let distinct_count = count(db, &format!("SELECT COUNT(DISTINCT {c}) FROM {t}"), &[])?;
    let rs = db.query(
        &format!(
            "SELECT DISTINCT {c} FROM {t} WHERE {c} IS NOT NULL ORDER BY CAST({c} AS TEXT), typeof({c}) LIMIT ?1"
        ),
        &[SqlValue::Integer(limit as i64)],
    )?;
    Ok(UniqValueResult {
        table: canonical_table(catalog, table),
        column: canonical_column(catalog, table, column),
        distinct_count,
        samples: rs.rows.iter().map(|r| r[0].to_json()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowsResult {
    pub table: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Json>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn rows_json(rows: &[Vec<SqlValue>]) -> Vec<Vec<Json>> {
    rows.iter().map(|r| r.iter().map(SqlValue::to_json).collect()).collect()
}

/// First `n` rows in storage order.
pub fn head(db: &dyn Database, catalog: &SchemaCatalog, table: &str, n: usize) -> Result<RowsResult, ToolError> {
    if n == 0 {
        return Err(ToolError::InvalidArgument("n must be at least 1".into()));
    }
    let rs = db.query(&format!("SELECT * FROM {} LIMIT ?1", quote_ident(table)), &[SqlValue::Integer(n as i64)])?;
    Ok(RowsResult { table: canonical_table(catalog, table), columns: rs.columns.clone(), rows: rows_json(&rs.rows), seed: None })
}

/// `n` rows drawn without replacement; the same seed gives the same rows.
/// Rows come back in storage order.
pub fn random(
    db: &dyn Database,
    catalog: &SchemaCatalog,
    table: &str,
    n: usize,
    seed: u64,
) -> Result<RowsResult, ToolError> {
    if n == 0 {
        return Err(ToolError::InvalidArgument("n must be at least 1".into()));
    }
    let t = quote_ident(table);
    let total = count(db, &format!("SELECT COUNT(*) FROM {t}"), &[])? as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, total, n.min(total)).into_vec();
    picks.sort_unstable();
    let mut columns = Vec::new();
    let mut rows = Vec::with_capacity(picks.len());
    for offset in picks {
        let rs = db.query(&format!("SELECT * FROM {t} LIMIT 1 OFFSET ?1"), &[SqlValue::Integer(offset as i64)])?;
        columns = rs.columns;
        rows.extend(rs.rows);
    }
    if columns.is_empty() {
        columns = db.query(&format!("SELECT * FROM {t} LIMIT 0"), &[])?.columns;
    }
    Ok(RowsResult { table: canonical_table(catalog, table), columns, rows: rows_json(&rows), seed: Some(seed) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullResult {
    pub table: String,
    pub column: String,
    pub null_count: u64,
    pub total: u64,
    pub fraction: f64,
}

pub fn if_null(db: &dyn Database, catalog: &SchemaCatalog, table: &str, column: &str) -> Result<NullResult, ToolError> {
    let rs = db.query(
        &format!("SELECT COUNT(*), COALESCE(SUM({} IS NULL), 0) FROM {}", quote_ident(column), quote_ident(table)),
        &[],
    )?;
    let get = |i: usize| rs.rows[0][i].as_i64().unwrap_or(0).max(0) as u64;
    let (total, null_count) = (get(0), get(1));
    Ok(NullResult {
        table: canonical_table(catalog, table),
        column: canonical_column(catalog, table, column),
        null_count,
        total,
        fraction: null_count as f64 / total.max(1) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub column: String,
    pub declared_type: String,
    pub description: Option<String>,
    pub value_description: Option<String>,
    pub null_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoResult {
    pub table: String,
    pub row_count: u64,
    pub columns: Vec<ColumnMeta>,
}

/// Catalog metadata with live row count and NULL share, for one column or all.
pub fn info(
    db: &dyn Database,
    catalog: &SchemaCatalog,
    table: &str,
    column: Option<&str>,
) -> Result<InfoResult, ToolError> {
    let t = catalog.table(table).ok_or_else(|| ToolError::UnknownTable(table.to_string()))?;
    let selected: Vec<_> = match column {
        Some(c) => vec![catalog.column(table, c).ok_or_else(|| ToolError::UnknownColumn {
            table: t.name.clone(),
            column: c.to_string(),
        })?],
        None => t.columns.iter().collect(),
    };
    let mut exprs = vec!["COUNT(*)".to_string()];
    exprs.extend(selected.iter().map(|c| format!("COALESCE(SUM({} IS NULL), 0)", quote_ident(&c.name))));
    let rs = db.query(&format!("SELECT {} FROM {}", exprs.join(", "), quote_ident(&t.name)), &[])?;
    let row = &rs.rows[0];
    let row_count = row[0].as_i64().unwrap_or(0).max(0) as u64;
    let columns = selected
        .iter()
        .enumerate()
        .map(|(i, c)| ColumnMeta {
            column: c.name.clone(),
            declared_type: c.declared_type.clone(),
            description: c.description.clone(),
            value_description: c.value_description.clone(),
            null_fraction: row[i + 1].as_i64().unwrap_or(0) as f64 / row_count.max(1) as f64,
        })
        .collect();
    Ok(InfoResult { table: t.name.clone(), row_count, columns })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredColumn {
    pub table: String,
    pub column: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimColumnsResult {
    pub query: String,
    pub columns: Vec<ScoredColumn>,
    pub scoring: String,
}

/// Text a column is matched on: `table.column description`.
pub fn column_document(table: &str, column: &str, description: Option<&str>) -> String {
    match description {
        Some(d) => format!("{table}.{column} {d}"),
        None => format!("{table}.{column}"),
    }
}

pub fn sim_columns(catalog: &SchemaCatalog, embedder: &dyn Embedder, query: &str, k: usize) -> SimColumnsResult {
    let pairs: Vec<(&str, &str)> = catalog.all_columns().map(|(t, c)| (t.name.as_str(), c.name.as_str())).collect();
    let docs: Vec<String> = catalog
        .all_columns()
        .map(|(t, c)| column_document(&t.name, &c.name, c.description.as_deref()))
        .collect();
    let (ranked, scoring) = rank_with_fallback(embedder, query, &docs, k);
    SimColumnsResult {
        query: query.to_string(),
        columns: ranked
            .into_iter()
            .map(|r| ScoredColumn { table: pairs[r.index].0.to_string(), column: pairs[r.index].1.to_string(), score: r.score })
            .collect(),
        scoring,
    }
}
