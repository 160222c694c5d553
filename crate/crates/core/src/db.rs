//! Read-only database access.
//!
//! [`Database`] is the whole engine surface the rest of the crate relies on:
//! run one read-only statement with bound parameters, list tables, list
//! columns. [`SqliteDatabase`] is the SQLite backend. Schema catalogs with
//! per-column descriptions are built on top of any backend by [`catalog`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

pub const DEFAULT_STATEMENT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DbError {
    #[error("database not found: {0}")]
    NotFound(PathBuf),
    #[error("database {path} is not readable: {reason}")]
    NotReadable { path: PathBuf, reason: String },
    #[error("statement would modify the database: {0}")]
    ReadOnlyViolation(String),
    /// Engine error text, verbatim.
    #[error("{0}")]
    Sql(String),
    #[error("statement exceeded the {0:?} timeout")]
    Timeout(Duration),
}

/// A single SQL scalar.
#[derive(Debug, Clone, PartialEq)]
pub enum SqlValue {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl SqlValue {
    pub fn to_json(&self) -> Json {
        match self {
            SqlValue::Null => Json::Null,
            SqlValue::Integer(i) => Json::from(*i),
            SqlValue::Real(f) => serde_json::Number::from_f64(*f).map(Json::Number).unwrap_or(Json::Null),
            SqlValue::Text(s) => Json::String(s.clone()),
            SqlValue::Blob(b) => Json::String(format!("X'{}'", hex::encode(b))),
        }
    }

    /// Binds a JSON scalar as a parameter; arrays and objects are rejected.
    pub fn from_json(v: &Json) -> Option<SqlValue> {
        Some(match v {
            Json::Null => SqlValue::Null,
            Json::Bool(b) => SqlValue::Integer(i64::from(*b)),
            Json::Number(n) => match n.as_i64() {
                Some(i) => SqlValue::Integer(i),
                None => SqlValue::Real(n.as_f64()?),
            },
            Json::String(s) => SqlValue::Text(s.clone()),
            Json::Array(_) | Json::Object(_) => return None,
        })
    }

    pub fn is_null(&self) -> bool {
        matches!(self, SqlValue::Null)
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            SqlValue::Integer(i) => Some(*i),
            SqlValue::Real(f) if f.fract() == 0.0 => Some(*f as i64),
            _ => None,
        }
    }
}

impl fmt::Display for SqlValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SqlValue::Null => f.write_str("NULL"),
            SqlValue::Integer(i) => write!(f, "{i}"),
            SqlValue::Real(r) => write!(f, "{r}"),
            SqlValue::Text(s) => f.write_str(s),
            SqlValue::Blob(b) => write!(f, "X'{}'", hex::encode(b)),
        }
    }
}

impl From<&str> for SqlValue {
    fn from(s: &str) -> Self {
        SqlValue::Text(s.to_string())
    }
}

impl From<i64> for SqlValue {
    fn from(i: i64) -> Self {
        SqlValue::Integer(i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<SqlValue>>,
    pub elapsed: Duration,
}

impl ResultSet {
    pub fn scalar(&self) -> Option<&SqlValue> {
        self.rows.first().and_then(|r| r.first())
    }

    /// Rows as JSON objects keyed by column name.
    pub fn rows_json(&self) -> Json {
        Json::Array(
            self.rows
                .iter()
                .map(|row| {
                    Json::Object(
                        self.columns.iter().cloned().zip(row.iter().map(SqlValue::to_json)).collect(),
                    )
                })
                .collect(),
        )
    }
}

/// Minimal engine interface. A new engine needs only these three operations.
pub trait Database: Send {
    /// Runs a single read-only statement with positional parameters.
    fn query(&self, sql: &str, params: &[SqlValue]) -> Result<ResultSet, DbError>;

    /// User tables in a stable order.
    fn table_names(&self) -> Result<Vec<String>, DbError>;

    /// `(name, declared_type)` for each column of `table`, in declaration order.
    fn table_columns(&self, table: &str) -> Result<Vec<(String, String)>, DbError>;
}

/// Quotes an identifier with backticks. Unknown names then fail with the
/// engine's "no such column" instead of degrading to string literals.
pub fn quote_ident(name: &str) -> String {
    format!("`{}`", name.replace('`', "``"))
}

pub struct SqliteDatabase {
    conn: Connection,
    path: PathBuf,
    timeout: Duration,
    // Deadline as nanoseconds since `epoch`; 0 disables the check.
    deadline: Arc<AtomicU64>,
    epoch: Instant,
}

impl fmt::Debug for SqliteDatabase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SqliteDatabase").field("path", &self.path).finish()
    }
}

impl SqliteDatabase {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, DbError> {
        Self::open_with_timeout(path, DEFAULT_STATEMENT_TIMEOUT)
    }

    pub fn open_with_timeout(path: impl AsRef<Path>, timeout: Duration) -> Result<Self, DbError> {
        let path = path.as_ref().to_path_buf();
        if !path.is_file() {
            return Err(DbError::NotFound(path));
        }
        let not_readable = |reason: String| DbError::NotReadable { path: path.clone(), reason };
        let conn = Connection::open_with_flags(
            &path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
        )
        .map_err(|e| not_readable(e.to_string()))?;
        conn.pragma_update(None, "query_only", true).map_err(|e| not_readable(e.to_string()))?;
        // Forces a read of the header so garbage files fail here, not on first probe.
        conn.query_row("SELECT count(*) FROM sqlite_master", [], |r| r.get::<_, i64>(0))
            .map_err(|e| not_readable(e.to_string()))?;

        let deadline = Arc::new(AtomicU64::new(0));
        let epoch = Instant::now();
        let handler_deadline = Arc::clone(&deadline);
        conn.progress_handler(
            10_000,
            Some(move || {
                let limit = handler_deadline.load(Ordering::Relaxed);
                limit != 0 && epoch.elapsed().as_nanos() as u64 > limit
            }),
        );
        Ok(SqliteDatabase { conn, path, timeout, deadline, epoch })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn arm_deadline(&self) {
        let at = self.epoch.elapsed() + self.timeout;
        self.deadline.store(at.as_nanos().max(1) as u64, Ordering::Relaxed);
    }

    fn disarm_deadline(&self) {
        self.deadline.store(0, Ordering::Relaxed);
    }

    fn map_err(&self, e: rusqlite::Error) -> DbError {
        match &e {
            rusqlite::Error::SqliteFailure(err, _) if err.code == rusqlite::ErrorCode::OperationInterrupted => {
                DbError::Timeout(self.timeout)
            }
            rusqlite::Error::SqliteFailure(_, Some(msg)) => DbError::Sql(msg.clone()),
            rusqlite::Error::SqlInputError { msg, .. } => DbError::Sql(msg.clone()),
            _ => DbError::Sql(e.to_string()),
        }
    }

    fn run(&self, sql: &str, params: &[SqlValue]) -> Result<ResultSet, DbError> {
        let started = Instant::now();
        let mut stmt = self.conn.prepare(sql).map_err(|e| self.map_err(e))?;
        if !stmt.readonly() {
            return Err(DbError::ReadOnlyViolation(sql.trim().to_string()));
        }
        let columns: Vec<String> = stmt.column_names().into_iter().map(str::to_string).collect();
        let bound: Vec<rusqlite::types::Value> = params.iter().map(to_rusqlite).collect();
        let mut rows_out = Vec::new();
        let mut rows = stmt.query(rusqlite::params_from_iter(bound.iter())).map_err(|e| self.map_err(e))?;
        while let Some(row) = rows.next().map_err(|e| self.map_err(e))? {
            let mut values = Vec::with_capacity(columns.len());
            for i in 0..columns.len() {
                values.push(from_value_ref(row.get_ref(i).map_err(|e| self.map_err(e))?));
            }
            rows_out.push(values);
        }
        Ok(ResultSet { columns, rows: rows_out, elapsed: started.elapsed() })
    }
}

fn to_rusqlite(v: &SqlValue) -> rusqlite::types::Value {
    use rusqlite::types::Value as V;
    match v {
        SqlValue::Null => V::Null,
        SqlValue::Integer(i) => V::Integer(*i),
        SqlValue::Real(f) => V::Real(*f),
        SqlValue::Text(s) => V::Text(s.clone()),
        SqlValue::Blob(b) => V::Blob(b.clone()),
    }
}

fn from_value_ref(v: ValueRef<'_>) -> SqlValue {
    match v {
        ValueRef::Null => SqlValue::Null,
        ValueRef::Integer(i) => SqlValue::Integer(i),
        ValueRef::Real(f) => SqlValue::Real(f),
        ValueRef::Text(t) => SqlValue::Text(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => SqlValue::Blob(b.to_vec()),
    }
}

impl Database for SqliteDatabase {
    fn query(&self, sql: &str, params: &[SqlValue]) -> Result<ResultSet, DbError> {
        self.arm_deadline();
        let out = self.run(sql, params);
        self.disarm_deadline();
        out
    }

    fn table_names(&self) -> Result<Vec<String>, DbError> {
        let rs = self.query(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
            &[],
        )?;
        Ok(rs.rows.into_iter().map(|r| r[0].to_string()).collect())
    }

    fn table_columns(&self, table: &str) -> Result<Vec<(String, String)>, DbError> {
        let rs = self.query("SELECT name, type FROM pragma_table_info(?1) ORDER BY cid", &[table.into()])?;
        if rs.rows.is_empty() {
            return Err(DbError::Sql(format!("no such table: {table}")));
        }
        Ok(rs.rows.into_iter().map(|r| (r[0].to_string(), r[1].to_string())).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub declared_type: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub value_description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableInfo {
    pub name: String,
    pub columns: Vec<ColumnInfo>,
    pub row_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaCatalog {
    pub tables: Vec<TableInfo>,
    /// Non-fatal problems met while reading description files.
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl SchemaCatalog {
    pub fn table(&self, name: &str) -> Option<&TableInfo> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn column(&self, table: &str, column: &str) -> Option<&ColumnInfo> {
        self.table(table)?.columns.iter().find(|c| c.name.eq_ignore_ascii_case(column))
    }

    /// `(table, column)` pairs in catalog order.
    pub fn all_columns(&self) -> impl Iterator<Item = (&TableInfo, &ColumnInfo)> {
        self.tables.iter().flat_map(|t| t.columns.iter().map(move |c| (t, c)))
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

/// Introspects every table and merges descriptions from `description_dir`
/// (one `<table>.csv` per table) when given.
pub fn catalog(db: &dyn Database, description_dir: Option<&Path>) -> Result<SchemaCatalog, DbError> {
    let mut tables = Vec::new();
    for name in db.table_names()? {
        let columns = db
            .table_columns(&name)?
            .into_iter()
            .map(|(name, declared_type)| ColumnInfo { name, declared_type, description: None, value_description: None })
            .collect();
        let count = db.query(&format!("SELECT COUNT(*) FROM {}", quote_ident(&name)), &[])?;
        let row_count = count.scalar().and_then(SqlValue::as_i64).unwrap_or(0).max(0) as u64;
        tables.push(TableInfo { name, columns, row_count });
    }
    let mut catalog = SchemaCatalog { tables, warnings: Vec::new() };
    if let Some(dir) = description_dir {
        merge_descriptions(&mut catalog, dir);
    }
    Ok(catalog)
}

struct DescriptionRow {
    column: String,
    description: Option<String>,
    value_description: Option<String>,
}

fn non_empty(s: Option<&str>) -> Option<String> {
    s.map(str::trim).filter(|s| !s.is_empty()).map(str::to_string)
}

fn parse_description_file(path: &Path) -> Result<Vec<DescriptionRow>, String> {
    let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&bytes);
    let text = text.trim_start_matches('\u{feff}');
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(|h| h.trim().to_lowercase())
        .collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let col_idx = find("original_column_name").ok_or("missing original_column_name header")?;
    let desc_idx = find("column_description");
    let value_idx = find("value_description");
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| e.to_string())?;
        let column = record.get(col_idx).unwrap_or("").trim().to_string();
        if column.is_empty() {
            continue;
        }
        out.push(DescriptionRow {
            column,
            description: non_empty(desc_idx.and_then(|i| record.get(i))),
            value_description: non_empty(value_idx.and_then(|i| record.get(i))),
        });
    }
    Ok(out)
}

fn merge_descriptions(catalog: &mut SchemaCatalog, dir: &Path) {
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) => {
            let msg = format!("cannot read description directory {}: {e}", dir.display());
            tracing::warn!("{msg}");
            catalog.warnings.push(msg);
            return;
        }
    };
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    for path in files {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let Some(table) = catalog.tables.iter_mut().find(|t| t.name.eq_ignore_ascii_case(&stem)) else {
            continue;
        };
        match parse_description_file(&path) {
            Ok(rows) => {
                for row in rows {
                    if let Some(col) = table.columns.iter_mut().find(|c| c.name.eq_ignore_ascii_case(&row.column)) {
                        col.description = row.description;
                        col.value_description = row.value_description;
                    }
                }
            }
            Err(e) => {
                let msg = format!("skipping descriptions in {}: {e}", path.display());
                tracing::warn!("{msg}");
                catalog.warnings.push(msg);
            }
        }
    }
}
