//! Shared fixture database and scripted-reply helpers.
#![allow(dead_code)]

pub mod ex_suite;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use evidencer::db::{catalog, Database, DbError, ResultSet, SchemaCatalog, SqlValue, SqliteDatabase};
use serde_json::{json, Value};
use tempfile::TempDir;

pub const DB_ID: &str = "california_schools";
pub const FIXTURE_SQL: &str = include_str!("../fixtures/california_schools.sql");
const DESCRIPTIONS: [(&str, &[u8]); 3] = [
    ("schools.csv", include_bytes!("../fixtures/database_description/schools.csv")),
    ("frpm.csv", include_bytes!("../fixtures/database_description/frpm.csv")),
    ("satscores.csv", include_bytes!("../fixtures/database_description/satscores.csv")),
];

/// A benchmark-style database root holding the fixture database.
pub struct Fixture {
    pub dir: TempDir,
}

impl Fixture {
    pub fn new() -> Fixture {
        let dir = tempfile::tempdir().expect("tempdir");
        let db_dir = dir.path().join(DB_ID);
        std::fs::create_dir_all(db_dir.join("database_description")).expect("mkdir");
        let conn = rusqlite::Connection::open(db_dir.join(format!("{DB_ID}.sqlite"))).expect("create db");
        conn.execute_batch(FIXTURE_SQL).expect("load fixture");
        drop(conn);
        for (name, bytes) in DESCRIPTIONS {
            std::fs::write(db_dir.join("database_description").join(name), bytes).expect("write description");
        }
        Fixture { dir }
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn db_path(&self) -> PathBuf {
        self.root().join(DB_ID).join(format!("{DB_ID}.sqlite"))
    }

    pub fn descriptions(&self) -> PathBuf {
        self.root().join(DB_ID).join("database_description")
    }

    pub fn open(&self) -> SqliteDatabase {
        SqliteDatabase::open(self.db_path()).expect("open fixture")
    }

    pub fn catalog(&self) -> SchemaCatalog {
        catalog(&self.open(), Some(&self.descriptions())).expect("catalog")
    }

    /// A writable connection for oracle queries.
    pub fn oracle(&self) -> rusqlite::Connection {
        rusqlite::Connection::open(self.db_path()).expect("oracle connection")
    }
}

/// Counts queries passed to the wrapped database.
pub struct CountingDb<D> {
    pub inner: D,
    pub queries: Arc<AtomicUsize>,
}

impl<D: Database> CountingDb<D> {
    pub fn new(inner: D) -> Self {
        CountingDb { inner, queries: Arc::new(AtomicUsize::new(0)) }
    }

    pub fn count(&self) -> usize {
        self.queries.load(Ordering::SeqCst)
    }
}

impl<D: Database> Database for CountingDb<D> {
    fn query(&self, sql: &str, params: &[SqlValue]) -> Result<ResultSet, DbError> {
        self.queries.fetch_add(1, Ordering::SeqCst);
        self.inner.query(sql, params)
    }

    fn table_names(&self) -> Result<Vec<String>, DbError> {
        self.inner.table_names()
    }

    fn table_columns(&self, table: &str) -> Result<Vec<(String, String)>, DbError> {
        self.inner.table_columns(table)
    }
}

/// A lookup reply: free-text thought followed by the call object.
pub fn reply(thought: &str, tool: &str, args: Value) -> String {
    format!("{thought}\n{}", json!({"tool": tool, "args": args}))
}

pub fn stop(thought: &str) -> String {
    reply(thought, "none", json!({}))
}

pub fn segmentation(clauses: &[&str]) -> String {
    serde_json::to_string(clauses).expect("clauses serialize")
}
