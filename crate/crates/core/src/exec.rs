//! Read-only SQL execution with a wall-clock timeout.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use serde::{Deserialize, Serialize};

use crate::catalog::open_read_only;

pub const DEFAULT_TIMEOUT_SECS: f64 = 30.0;

/// Message used when a statement would modify the database.
pub const WRITE_FORBIDDEN: &str = "write forbidden: only read-only statements may be executed";

/// One result cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SqlValue {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob { blob: String },
}

impl SqlValue {
    fn from_ref(value: ValueRef<'_>) -> Self {
        match value {
            ValueRef::Null => SqlValue::Null,
            ValueRef::Integer(i) => SqlValue::Integer(i),
            ValueRef::Real(r) => SqlValue::Real(r),
            ValueRef::Text(t) => SqlValue::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => SqlValue::Blob { blob: hex::encode(b) },
        }
    }

    /// Numeric view used by tolerant comparison.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            SqlValue::Integer(i) => Some(*i as f64),
            SqlValue::Real(r) => Some(*r),
            _ => None,
        }
    }
}

impl std::fmt::Display for SqlValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SqlValue::Null => f.write_str("NULL"),
            SqlValue::Integer(i) => write!(f, "{i}"),
            SqlValue::Real(r) => write!(f, "{r}"),
            SqlValue::Text(t) => f.write_str(t),
            SqlValue::Blob { blob } => write!(f, "x'{blob}'"),
        }
    }
}

pub type Row = Vec<SqlValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ExecutionStatus {
    Ok { rows: Vec<Row> },
    SqlError { message: String },
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    #[serde(flatten)]
    pub status: ExecutionStatus,
    pub elapsed_secs: f64,
}

impl ExecutionOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(self.status, ExecutionStatus::Ok { .. })
    }

    pub fn rows(&self) -> Option<&[Row]> {
        match &self.status {
            ExecutionStatus::Ok { rows } => Some(rows),
            _ => None,
        }
    }

    pub fn error_message(&self) -> Option<&str> {
        match &self.status {
            ExecutionStatus::SqlError { message } => Some(message),
            _ => None,
        }
    }

    /// Text fed back to the model on failure.
    pub fn feedback(&self) -> String {
        match &self.status {
            ExecutionStatus::Ok { rows } if rows.is_empty() => "The query executed but returned no rows.".to_string(),
            ExecutionStatus::Ok { .. } => String::new(),
            ExecutionStatus::SqlError { message } => message.clone(),
            ExecutionStatus::Timeout => "The query timed out.".to_string(),
        }
    }

    /// Same outcome with the timing zeroed, for byte-stable output.
    pub fn without_timing(mut self) -> Self {
        self.elapsed_secs = 0.0;
        self
    }
}

/// Execute one read statement against the database at `db_path`.
///
/// The connection is opened read-only and statements that would write are
/// refused before they run. Engine errors are returned verbatim.
pub fn execute_sql(db_path: &Path, sql: &str, timeout_secs: f64) -> ExecutionOutcome {
    let start = Instant::now();
    let status = run(db_path, sql, timeout_secs);
    ExecutionOutcome { status, elapsed_secs: start.elapsed().as_secs_f64() }
}

fn run(db_path: &Path, sql: &str, timeout_secs: f64) -> ExecutionStatus {
    let sql_error = |message: String| ExecutionStatus::SqlError { message };
    let conn = match open_read_only(db_path) {
        Ok(c) => c,
        Err(e) => return sql_error(e.to_string()),
    };
    let mut stmt = match conn.prepare(sql) {
        Ok(s) => s,
        Err(e) => return sql_error(e.to_string()),
    };
    if !stmt.readonly() {
        return sql_error(WRITE_FORBIDDEN.to_string());
    }

    let timed_out = Arc::new(AtomicBool::new(false));
    let (done_tx, done_rx) = mpsc::channel::<()>();
    let watcher = {
        let handle = conn.get_interrupt_handle();
        let timed_out = Arc::clone(&timed_out);
        let limit = Duration::from_secs_f64(timeout_secs.max(0.0));
        std::thread::spawn(move || {
            if let Err(mpsc::RecvTimeoutError::Timeout) = done_rx.recv_timeout(limit) {
                timed_out.store(true, Ordering::SeqCst);
                handle.interrupt();
            }
        })
    };

    let columns = stmt.column_count();
    let result = (|| -> rusqlite::Result<Vec<Row>> {
        let mut rows = stmt.query([])?;
        let mut out = Vec::new();
        while let Some(row) = rows.next()? {
            let mut values = Vec::with_capacity(columns);
            for i in 0..columns {
                values.push(SqlValue::from_ref(row.get_ref(i)?));
            }
            out.push(values);
        }
        Ok(out)
    })();
    let _ = done_tx.send(());
    let _ = watcher.join();

    match result {
        Ok(rows) => ExecutionStatus::Ok { rows },
        Err(_) if timed_out.load(Ordering::SeqCst) => ExecutionStatus::Timeout,
        Err(e) => sql_error(e.to_string()),
    }
}
