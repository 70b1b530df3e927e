//! SQL execution with isolation and timeouts, result normalization, and
//! EX/TS equivalence decisions.
//!
//! Execution is strictly side-effect free: connections are opened read-only,
//! statements run inside a transaction that is rolled back, and anything that
//! is not a plain query is rejected before it reaches the engine. An engine
//! error is *data* (the prediction was non-executable), not a harness
//! failure; harness failures are unresolvable databases and failing gold
//! queries.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::corpus::{CorpusError, DatasetItem, DbRoot};

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("gold query failed on item {item_id}: {message}")]
    GoldFailed { item_id: String, message: String },
}

/// One normalized cell. Integral reals are folded to integers at
/// construction so engine affinity quirks (`2.0` vs `2`) cannot break
/// equality. Reals are expected finite; non-finite values are kept as-is and
/// compare only to themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellValue {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl CellValue {
    pub fn from_value_ref(value: ValueRef<'_>) -> Self {
        match value {
            ValueRef::Null => CellValue::Null,
            ValueRef::Integer(i) => CellValue::Integer(i),
            ValueRef::Real(f) => Self::normalized_real(f),
            ValueRef::Text(t) => CellValue::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => CellValue::Blob(b.to_vec()),
        }
    }

    fn normalized_real(f: f64) -> Self {
        // `fract() == 0` alone is not enough: every f64 above 2^52 is
        // integral but may not fit in i64.
        if f.is_finite() && f.fract() == 0.0 && f >= -(2f64.powi(63)) && f < 2f64.powi(63) {
            CellValue::Integer(f as i64)
        } else {
            CellValue::Real(f)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecStatus {
    #[serde(rename = "ROWS")]
    Rows,
    #[serde(rename = "ERROR")]
    Error,
    #[serde(rename = "TIMEOUT")]
    Timeout,
}

/// Normalized result of running one SQL statement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    #[serde(default)]
    pub rows: Vec<Vec<CellValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_msg: Option<String>,
    pub elapsed_ms: u64,
}

impl ExecutionOutcome {
    pub fn rows(rows: Vec<Vec<CellValue>>, elapsed: Duration) -> Self {
        Self {
            status: ExecStatus::Rows,
            rows,
            error_msg: None,
            elapsed_ms: elapsed.as_millis() as u64,
        }
    }

    pub fn error(message: impl Into<String>, elapsed: Duration) -> Self {
        Self {
            status: ExecStatus::Error,
            rows: Vec::new(),
            error_msg: Some(message.into()),
            elapsed_ms: elapsed.as_millis() as u64,
        }
    }

    pub fn timeout(elapsed: Duration) -> Self {
        Self {
            status: ExecStatus::Timeout,
            rows: Vec::new(),
            error_msg: None,
            elapsed_ms: elapsed.as_millis() as u64,
        }
    }

    pub fn is_rows(&self) -> bool {
        self.status == ExecStatus::Rows
    }
}

/// Three-way judgment of a predicted SQL statement against its gold query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "CORRECT")]
    Correct,
    #[serde(rename = "INCORRECT")]
    Incorrect,
    #[serde(rename = "NONEXECUTABLE")]
    Nonexecutable,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::Correct => "CORRECT",
            Verdict::Incorrect => "INCORRECT",
            Verdict::Nonexecutable => "NONEXECUTABLE",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct ExecConfig {
    pub timeout_ms: u64,
    pub workers: usize,
    /// Re-run timed-out jobs once with exclusive access; mitigates false
    /// negatives from worker contention.
    pub retry_serial_on_timeout: bool,
    /// Absolute tolerance for real-valued cell equality.
    pub real_abs_tol: f64,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            timeout_ms: 30_000,
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            retry_serial_on_timeout: true,
            real_abs_tol: 1e-6,
        }
    }
}

/// Granularity of the timeout check, in VDBE instructions.
const PROGRESS_OPS: std::os::raw::c_int = 250;

/// Splits `sql` on statement-terminating semicolons, honoring string
/// literals (`'`), quoted identifiers (`"`, `` ` ``, `[...]`), line comments
/// and block comments. Returns the non-empty statements.
fn split_statements(sql: &str) -> Vec<&str> {
    let bytes = sql.as_bytes();
    let mut parts = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < bytes.len() {
        match bytes[i] {
            b'\'' | b'"' | b'`' => {
                let quote = bytes[i];
                i += 1;
                while i < bytes.len() {
                    if bytes[i] == quote {
                        // Doubled quote is an escaped quote character.
                        if i + 1 < bytes.len() && bytes[i + 1] == quote {
                            i += 2;
                            continue;
                        }
                        break;
                    }
                    i += 1;
                }
            }
            b'[' => {
                while i < bytes.len() && bytes[i] != b']' {
                    i += 1;
                }
            }
            b'-' if i + 1 < bytes.len() && bytes[i + 1] == b'-' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if i + 1 < bytes.len() && bytes[i + 1] == b'*' => {
                i += 2;
                while i + 1 < bytes.len() && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                    i += 1;
                }
                i += 1;
            }
            b';' => {
                let part = sql[start..i].trim();
                if !part.is_empty() {
                    parts.push(part);
                }
                start = i + 1;
            }
            _ => {}
        }
        i += 1;
    }
    let tail = sql[start.min(sql.len())..].trim();
    if !tail.is_empty() {
        parts.push(tail);
    }
    parts
}

/// Rejects anything that is not a single read-only query. Parse failures are
/// let through: the engine is the authority on executability and its error
/// message must be preserved verbatim.
fn reject_non_query(sql: &str) -> Option<String> {
    use sqlparser::ast::Statement;
    use sqlparser::dialect::SQLiteDialect;
    match sqlparser::parser::Parser::parse_sql(&SQLiteDialect {}, sql) {
        Ok(statements) => {
            for statement in &statements {
                match statement {
                    Statement::Query(_) => {}
                    other => {
                        return Some(format!(
                            "write or control statements are rejected: {}",
                            statement_kind(other)
                        ))
                    }
                }
            }
            None
        }
        Err(_) => None,
    }
}

fn statement_kind(statement: &sqlparser::ast::Statement) -> &'static str {
    use sqlparser::ast::Statement::*;
    match statement {
        Insert(_) => "INSERT",
        Update { .. } => "UPDATE",
        Delete(_) => "DELETE",
        CreateTable(_) | CreateView { .. } | CreateIndex(_) => "CREATE",
        Drop { .. } => "DROP",
        AlterTable { .. } => "ALTER",
        Pragma { .. } => "PRAGMA",
        AttachDatabase { .. } => "ATTACH",
        _ => "non-query statement",
    }
}

/// Executes one statement against a database file, honoring the timeout.
pub fn execute_on_file(db_file: &Path, sql: &str, cfg: &ExecConfig) -> ExecutionOutcome {
    let started = Instant::now();
    let trimmed = sql.trim();
    if trimmed.is_empty() {
        return ExecutionOutcome::error("empty statement", started.elapsed());
    }
    let statements = split_statements(trimmed);
    if statements.len() > 1 {
        return ExecutionOutcome::error(
            "you can only execute one statement at a time",
            started.elapsed(),
        );
    }
    let statement = match statements.first() {
        Some(s) => *s,
        None => return ExecutionOutcome::error("empty statement", started.elapsed()),
    };
    if let Some(message) = reject_non_query(statement) {
        return ExecutionOutcome::error(message, started.elapsed());
    }

    let conn = match Connection::open_with_flags(
        db_file,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    ) {
        Ok(conn) => conn,
        Err(e) => return ExecutionOutcome::error(e.to_string(), started.elapsed()),
    };

    let deadline = started + Duration::from_millis(cfg.timeout_ms);
    conn.progress_handler(PROGRESS_OPS, Some(move || Instant::now() >= deadline));

    let result = run_query(&conn, statement);
    let elapsed = started.elapsed();
    match result {
        Ok(rows) => ExecutionOutcome::rows(rows, elapsed),
        Err(e) => {
            if is_interrupt(&e) || started.elapsed() >= Duration::from_millis(cfg.timeout_ms) {
                ExecutionOutcome::timeout(elapsed)
            } else {
                ExecutionOutcome::error(e.to_string(), elapsed)
            }
        }
    }
}

fn run_query(conn: &Connection, sql: &str) -> Result<Vec<Vec<CellValue>>, rusqlite::Error> {
    let tx = conn.unchecked_transaction()?;
    let mut stmt = tx.prepare(sql)?;
    let ncols = stmt.column_count();
    let mut out = Vec::new();
    let mut rows = stmt.query([])?;
    while let Some(row) = rows.next()? {
        let mut cells = Vec::with_capacity(ncols);
        for i in 0..ncols {
            cells.push(CellValue::from_value_ref(row.get_ref(i)?));
        }
        out.push(cells);
    }
    drop(rows);
    drop(stmt);
    tx.rollback()?;
    Ok(out)
}

fn is_interrupt(e: &rusqlite::Error) -> bool {
    matches!(
        e,
        rusqlite::Error::SqliteFailure(err, _)
            if err.code == rusqlite::ErrorCode::OperationInterrupted
    )
}

fn cell_eq(a: &CellValue, b: &CellValue, tol: f64) -> bool {
    use CellValue::*;
    match (a, b) {
        (Null, Null) => true,
        (Integer(x), Integer(y)) => x == y,
        (Real(x), Real(y)) => x == y || (x - y).abs() <= tol,
        (Integer(x), Real(y)) | (Real(y), Integer(x)) => {
            let xf = *x as f64;
            xf == *y || (xf - y).abs() <= tol
        }
        (Text(x), Text(y)) => x == y,
        (Blob(x), Blob(y)) => x == y,
        _ => false,
    }
}

/// Total order over cells used to canonicalize row multisets before
/// pairwise comparison. Numeric values (integer or real) share one ordering
/// class so near-equal values of mixed type end up adjacent.
fn cmp_cell(a: &CellValue, b: &CellValue) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    use CellValue::*;
    fn rank(v: &CellValue) -> u8 {
        match v {
            Null => 0,
            Integer(_) | Real(_) => 1,
            Text(_) => 2,
            Blob(_) => 3,
        }
    }
    match rank(a).cmp(&rank(b)) {
        Ordering::Equal => match (a, b) {
            (Integer(x), Integer(y)) => x.cmp(y),
            (Integer(x), Real(y)) => (*x as f64).total_cmp(y),
            (Real(x), Integer(y)) => x.total_cmp(&(*y as f64)),
            (Real(x), Real(y)) => x.total_cmp(y),
            (Text(x), Text(y)) => x.cmp(y),
            (Blob(x), Blob(y)) => x.cmp(y),
            _ => Ordering::Equal,
        },
        other => other,
    }
}

fn cmp_row(a: &[CellValue], b: &[CellValue]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match cmp_cell(x, y) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

fn rows_eq(a: &[Vec<CellValue>], b: &[Vec<CellValue>], tol: f64) -> bool {
    a.len() == b.len()
        && a.iter().zip(b.iter()).all(|(ra, rb)| {
            ra.len() == rb.len() && ra.iter().zip(rb.iter()).all(|(x, y)| cell_eq(x, y, tol))
        })
}

/// Decides whether a predicted outcome matches the gold outcome.
///
/// False whenever the prediction did not produce rows. Otherwise rows must
/// match as sequences (when `order_sensitive`) or as multisets, under cell
/// equality: NULL = NULL, integers exact, reals within `real_abs_tol`, text
/// exact and case-sensitive. Column order within a row is always significant.
pub fn results_match(
    gold: &ExecutionOutcome,
    pred: &ExecutionOutcome,
    order_sensitive: bool,
    cfg: &ExecConfig,
) -> bool {
    if !gold.is_rows() || !pred.is_rows() {
        return false;
    }
    if gold.rows.len() != pred.rows.len() {
        return false;
    }
    if let (Some(g), Some(p)) = (gold.rows.first(), pred.rows.first()) {
        if g.len() != p.len() {
            return false;
        }
    }
    if order_sensitive {
        rows_eq(&gold.rows, &pred.rows, cfg.real_abs_tol)
    } else {
        let mut g = gold.rows.clone();
        let mut p = pred.rows.clone();
        g.sort_by(|a, b| cmp_row(a, b));
        p.sort_by(|a, b| cmp_row(a, b));
        rows_eq(&g, &p, cfg.real_abs_tol)
    }
}

/// Canonical key of a row set under the grouping semantics of majority
/// voting: numerics are bucketed on the `real_abs_tol` grid, rows are sorted
/// unless order matters. Key equality is an equivalence relation by
/// construction, which pairwise tolerant comparison is not.
pub fn canonical_result_key(
    outcome: &ExecutionOutcome,
    order_sensitive: bool,
    cfg: &ExecConfig,
) -> Option<String> {
    if !outcome.is_rows() {
        return None;
    }
    let decimals = tolerance_decimals(cfg.real_abs_tol);
    let mut rows: Vec<String> = outcome
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .map(|cell| canon_cell(cell, decimals))
                .collect::<Vec<_>>()
                .join("\u{1}")
        })
        .collect();
    if !order_sensitive {
        rows.sort();
    }
    Some(rows.join("\u{2}"))
}

fn tolerance_decimals(tol: f64) -> Option<usize> {
    if tol <= 0.0 {
        return None;
    }
    let d = (-tol.log10()).ceil();
    Some(d.clamp(0.0, 15.0) as usize)
}

fn canon_cell(cell: &CellValue, decimals: Option<usize>) -> String {
    match cell {
        CellValue::Null => "n:".to_string(),
        CellValue::Integer(v) => match decimals {
            Some(d) => normalize_zero(format!("d:{v}.{:0<width$}", "", width = d)),
            None => format!("i:{v}"),
        },
        CellValue::Real(v) => match decimals {
            Some(d) if v.is_finite() => normalize_zero(format!("d:{v:.d$}")),
            _ => format!("r:{v}"),
        },
        CellValue::Text(s) => format!("t:{s}"),
        CellValue::Blob(b) => {
            let hex: String = b.iter().map(|x| format!("{x:02x}")).collect();
            format!("b:{hex}")
        }
    }
}

/// `-0.000000` and `0.000000` are the same bucket.
fn normalize_zero(mut s: String) -> String {
    if s.starts_with("d:-") && s[3..].chars().all(|c| c == '0' || c == '.') {
        s.remove(2);
    }
    s
}

/// One judging job: a dataset item plus the predicted SQL for it.
#[derive(Debug, Clone)]
pub struct JudgeJob {
    pub item: DatasetItem,
    pub pred_sql: String,
}

/// Everything judging one prediction produced. Outcomes are kept so callers
/// can build majority-vote groupings and error-analysis fixtures without
/// re-executing.
#[derive(Debug, Clone)]
pub struct Judgment {
    pub verdict: Verdict,
    pub gold_outcome: ExecutionOutcome,
    pub pred_outcome: ExecutionOutcome,
    pub order_sensitive: bool,
}

/// Executes SQL against databases resolved from a [`DbRoot`].
#[derive(Debug, Clone)]
pub struct Executor {
    db_root: DbRoot,
}

impl Executor {
    pub fn new(db_root: DbRoot) -> Self {
        Self { db_root }
    }

    pub fn db_root(&self) -> &DbRoot {
        &self.db_root
    }

    /// Runs one statement on the item's database. Engine errors come back as
    /// ERROR outcomes with the engine's message verbatim; only an
    /// unresolvable database is a harness error.
    pub fn execute(&self, db_id: &str, sql: &str, cfg: &ExecConfig) -> Result<ExecutionOutcome, ExecError> {
        let file = self.db_root.db_file(db_id)?;
        Ok(execute_on_file(&file, sql, cfg))
    }

    pub fn ex_verdict(
        &self,
        item: &DatasetItem,
        pred_sql: &str,
        cfg: &ExecConfig,
    ) -> Result<Verdict, ExecError> {
        let file = self.db_root.db_file(&item.db_id)?;
        ex_verdict_on_file(&file, item, pred_sql, cfg).map(|j| j.verdict)
    }

    /// Full judgment (verdict plus both outcomes) on the item's database.
    pub fn judge(
        &self,
        item: &DatasetItem,
        pred_sql: &str,
        cfg: &ExecConfig,
    ) -> Result<Judgment, ExecError> {
        let file = self.db_root.db_file(&item.db_id)?;
        ex_verdict_on_file(&file, item, pred_sql, cfg)
    }

    /// Test-suite verdict: true iff the prediction is CORRECT on every
    /// instance.
    pub fn ts_verdict(
        &self,
        item: &DatasetItem,
        pred_sql: &str,
        suite_files: &[PathBuf],
        cfg: &ExecConfig,
    ) -> Result<bool, ExecError> {
        assert!(!suite_files.is_empty(), "ts_verdict requires at least one instance");
        for file in suite_files {
            let judgment = ex_verdict_on_file(file, item, pred_sql, cfg)?;
            if judgment.verdict != Verdict::Correct {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Judges a batch on a worker pool. The output order matches the job
    /// order regardless of completion order, and per-job errors land in that
    /// job's slot; the batch never aborts because one job failed. When
    /// `retry_serial_on_timeout` is set, jobs whose prediction timed out are
    /// re-run once serially after the pool has drained.
    pub fn judge_batch(
        &self,
        jobs: &[JudgeJob],
        cfg: &ExecConfig,
    ) -> Vec<Result<Judgment, ExecError>> {
        let mut results = parallel_map_indexed(jobs, cfg.workers, |_, job| {
            self.judge(&job.item, &job.pred_sql, cfg)
        });

        if cfg.retry_serial_on_timeout {
            for (index, result) in results.iter_mut().enumerate() {
                let timed_out = matches!(
                    result,
                    Ok(Judgment { pred_outcome, .. }) if pred_outcome.status == ExecStatus::Timeout
                );
                if timed_out {
                    let job = &jobs[index];
                    *result = self.judge(&job.item, &job.pred_sql, cfg);
                }
            }
        }
        results
    }
}

/// Applies `f` to each element on a bounded worker pool, returning results
/// in input order regardless of completion order.
pub fn parallel_map_indexed<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= items.len() {
                    break;
                }
                let result = f(index, &items[index]);
                slots.lock().unwrap()[index] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every slot is filled"))
        .collect()
}

/// EX verdict against a specific database file.
///
/// `order_sensitive` is derived from the gold statement: a top-level
/// ORDER BY makes row order significant.
pub fn ex_verdict_on_file(
    db_file: &Path,
    item: &DatasetItem,
    pred_sql: &str,
    cfg: &ExecConfig,
) -> Result<Judgment, ExecError> {
    let gold_outcome = execute_on_file(db_file, &item.gold_sql, cfg);
    if !gold_outcome.is_rows() {
        return Err(ExecError::GoldFailed {
            item_id: item.item_id.clone(),
            message: gold_outcome
                .error_msg
                .clone()
                .unwrap_or_else(|| format!("{:?}", gold_outcome.status)),
        });
    }
    let order_sensitive = analysis::has_top_level_order_by(&item.gold_sql);
    let pred_outcome = execute_on_file(db_file, pred_sql, cfg);
    let verdict = if !pred_outcome.is_rows() {
        Verdict::Nonexecutable
    } else if results_match(&gold_outcome, &pred_outcome, order_sensitive, cfg) {
        Verdict::Correct
    } else {
        Verdict::Incorrect
    };
    Ok(Judgment {
        verdict,
        gold_outcome,
        pred_outcome,
        order_sensitive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use std::time::Duration;

    fn cfg() -> ExecConfig {
        ExecConfig {
            timeout_ms: 5_000,
            workers: 2,
            retry_serial_on_timeout: true,
            real_abs_tol: 1e-6,
        }
    }

    #[test]
    fn split_statements_handles_quotes_and_comments() {
        assert_eq!(split_statements("SELECT 1"), vec!["SELECT 1"]);
        assert_eq!(split_statements("SELECT 1;"), vec!["SELECT 1"]);
        assert_eq!(split_statements("SELECT 'a;b' FROM t;"), vec!["SELECT 'a;b' FROM t"]);
        assert_eq!(
            split_statements("SELECT 1 -- trailing; comment\n; SELECT 2"),
            vec!["SELECT 1 -- trailing; comment", "SELECT 2"]
        );
        assert_eq!(split_statements("SELECT /* ; */ 1"), vec!["SELECT /* ; */ 1"]);
        assert_eq!(split_statements("SELECT 1; SELECT 2").len(), 2);
    }

    #[test]
    fn count_query_returns_rows() {
        let dir = tempfile::tempdir().unwrap();
        let root = fixtures::build_fixture_root(dir.path());
        let executor = Executor::new(root);
        // The molecules fixture stores exactly three '#' bonds.
        let outcome = executor
            .execute(
                "molecules",
                "SELECT count(*) FROM bond WHERE bond_type = '#'",
                &cfg(),
            )
            .unwrap();
        assert_eq!(outcome.status, ExecStatus::Rows);
        assert_eq!(outcome.rows, vec![vec![CellValue::Integer(3)]]);
    }

    #[test]
    fn incomplete_statement_is_error_with_message() {
        let dir = tempfile::tempdir().unwrap();
        let root = fixtures::build_fixture_root(dir.path());
        let executor = Executor::new(root);
        let outcome = executor.execute("molecules", "SELECT", &cfg()).unwrap();
        assert_eq!(outcome.status, ExecStatus::Error);
        assert!(!outcome.error_msg.as_deref().unwrap_or("").is_empty());
    }

    #[test]
    fn unbounded_recursion_times_out() {
        let dir = tempfile::tempdir().unwrap();
        let root = fixtures::build_fixture_root(dir.path());
        let executor = Executor::new(root);
        let mut config = cfg();
        config.timeout_ms = 100;
        config.retry_serial_on_timeout = false;
        let outcome = executor
            .execute("molecules", fixtures::RUNAWAY_QUERY, &config)
            .unwrap();
        assert_eq!(outcome.status, ExecStatus::Timeout);
    }

    #[test]
    fn writes_are_rejected_up_front() {
        let dir = tempfile::tempdir().unwrap();
        let root = fixtures::build_fixture_root(dir.path());
        let executor = Executor::new(root);
        let outcome = executor
            .execute("molecules", "DELETE FROM bond", &cfg())
            .unwrap();
        assert_eq!(outcome.status, ExecStatus::Error);
        assert!(outcome.error_msg.unwrap().contains("rejected"));
    }

    #[test]
    fn unknown_db_is_a_harness_error() {
        let dir = tempfile::tempdir().unwrap();
        let root = fixtures::build_fixture_root(dir.path());
        let executor = Executor::new(root);
        assert!(matches!(
            executor.execute("nope", "SELECT 1", &cfg()),
            Err(ExecError::Corpus(CorpusError::UnknownDb { .. }))
        ));
    }

    #[test]
    fn cell_values_round_trip_through_json() {
        let row = vec![
            CellValue::Null,
            CellValue::Integer(-7),
            CellValue::Real(2.5),
            CellValue::Text("Mixed Case".into()),
            CellValue::Blob(vec![0, 127, 255]),
        ];
        let json = serde_json::to_string(&row).unwrap();
        let back: Vec<CellValue> = serde_json::from_str(&json).unwrap();
        assert_eq!(row, back);
    }

    #[test]
    fn multiset_match_ignores_row_order() {
        let gold = ExecutionOutcome::rows(
            vec![
                vec![CellValue::Text("a".into()), CellValue::Integer(1)],
                vec![CellValue::Text("b".into()), CellValue::Integer(2)],
            ],
            Duration::ZERO,
        );
        let pred = ExecutionOutcome::rows(
            vec![
                vec![CellValue::Text("b".into()), CellValue::Integer(2)],
                vec![CellValue::Text("a".into()), CellValue::Integer(1)],
            ],
            Duration::ZERO,
        );
        assert!(results_match(&gold, &pred, false, &cfg()));
        assert!(!results_match(&gold, &pred, true, &cfg()));
    }

    #[test]
    fn error_outcome_never_matches() {
        let gold = ExecutionOutcome::rows(vec![vec![CellValue::Integer(1)]], Duration::ZERO);
        let pred = ExecutionOutcome::error("boom", Duration::ZERO);
        assert!(!results_match(&gold, &pred, false, &cfg()));
    }

    #[test]
    fn real_tolerance_and_affinity_normalization() {
        let gold = ExecutionOutcome::rows(vec![vec![CellValue::Integer(2)]], Duration::ZERO);
        let pred = ExecutionOutcome::rows(vec![vec![CellValue::Real(2.0000004)]], Duration::ZERO);
        assert!(results_match(&gold, &pred, false, &cfg()));
        assert_eq!(CellValue::from_value_ref(ValueRef::Real(2.0)), CellValue::Integer(2));
        assert_eq!(CellValue::from_value_ref(ValueRef::Real(2.5)), CellValue::Real(2.5));
        assert_eq!(CellValue::from_value_ref(ValueRef::Real(1e300)), CellValue::Real(1e300));
    }

    #[test]
    fn column_order_within_rows_is_significant() {
        let gold = ExecutionOutcome::rows(
            vec![vec![CellValue::Integer(1), CellValue::Integer(2)]],
            Duration::ZERO,
        );
        let pred = ExecutionOutcome::rows(
            vec![vec![CellValue::Integer(2), CellValue::Integer(1)]],
            Duration::ZERO,
        );
        assert!(!results_match(&gold, &pred, false, &cfg()));
    }

    #[test]
    fn self_match_is_correct_and_entity_mismatch_is_incorrect() {
        let dir = tempfile::tempdir().unwrap();
        let root = fixtures::build_fixture_root(dir.path());
        let executor = Executor::new(root);
        let item = DatasetItem {
            item_id: "c1".into(),
            question: "codes of American drivers".into(),
            evidence: String::new(),
            db_id: "drivers".into(),
            gold_sql: "SELECT code FROM drivers WHERE Nationality = 'American'".into(),
        };
        assert_eq!(executor.ex_verdict(&item, &item.gold_sql, &cfg()).unwrap(), Verdict::Correct);
        // Value-retrieval slip: the stored entity is 'American', not 'America'.
        assert_eq!(
            executor
                .ex_verdict(&item, "SELECT code FROM drivers WHERE nationality = 'America'", &cfg())
                .unwrap(),
            Verdict::Incorrect
        );
        assert_eq!(
            executor
                .ex_verdict(&item, "SELECT made_up FROM drivers", &cfg())
                .unwrap(),
            Verdict::Nonexecutable
        );
    }

    #[test]
    fn gold_failure_is_reported_not_swallowed() {
        let dir = tempfile::tempdir().unwrap();
        let root = fixtures::build_fixture_root(dir.path());
        let executor = Executor::new(root);
        let item = DatasetItem {
            item_id: "bad".into(),
            question: "q".into(),
            evidence: String::new(),
            db_id: "drivers".into(),
            gold_sql: "SELECT nope FROM drivers".into(),
        };
        assert!(matches!(
            executor.ex_verdict(&item, "SELECT 1", &cfg()),
            Err(ExecError::GoldFailed { .. })
        ));
    }

    #[test]
    fn ts_verdict_is_per_instance_conjunction() {
        let dir = tempfile::tempdir().unwrap();
        let root = fixtures::build_fixture_root(dir.path());
        let suite = fixtures::build_suite_instances(dir.path(), "drivers", 3);
        let executor = Executor::new(root);
        let item = DatasetItem {
            item_id: "t".into(),
            question: "q".into(),
            evidence: String::new(),
            db_id: "drivers".into(),
            gold_sql: "SELECT code FROM drivers WHERE Nationality = 'American'".into(),
        };
        // Identical SQL passes everywhere.
        assert!(executor.ts_verdict(&item, &item.gold_sql, &suite, &cfg()).unwrap());
        // A prediction equivalent on the base data but not on all instances fails.
        let pred = "SELECT code FROM drivers WHERE code < 100";
        let conjunction = suite
            .iter()
            .map(|f| ex_verdict_on_file(f, &item, pred, &cfg()).unwrap().verdict)
            .all(|v| v == Verdict::Correct);
        assert_eq!(executor.ts_verdict(&item, pred, &suite, &cfg()).unwrap(), conjunction);
        // Singleton suite equals plain EX on that instance.
        let single = &suite[..1];
        let ex = ex_verdict_on_file(&single[0], &item, pred, &cfg()).unwrap().verdict;
        assert_eq!(
            executor.ts_verdict(&item, pred, single, &cfg()).unwrap(),
            ex == Verdict::Correct
        );
    }

    #[test]
    fn batch_of_zero_jobs_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let root = fixtures::build_fixture_root(dir.path());
        let executor = Executor::new(root);
        assert!(executor.judge_batch(&[], &cfg()).is_empty());
    }

    #[test]
    fn parallel_and_serial_batches_agree() {
        let dir = tempfile::tempdir().unwrap();
        let root = fixtures::build_fixture_root(dir.path());
        let executor = Executor::new(root);
        let jobs = fixtures::fixture_judge_jobs();
        let serial: Vec<_> = {
            let mut c = cfg();
            c.workers = 1;
            executor
                .judge_batch(&jobs, &c)
                .into_iter()
                .map(|r| r.map(|j| j.verdict).map_err(|e| e.to_string()))
                .collect()
        };
        let parallel: Vec<_> = {
            let mut c = cfg();
            c.workers = 8;
            executor
                .judge_batch(&jobs, &c)
                .into_iter()
                .map(|r| r.map(|j| j.verdict).map_err(|e| e.to_string()))
                .collect()
        };
        assert_eq!(serial, parallel);
    }

    #[test]
    fn timeout_job_does_not_disturb_neighbors() {
        let dir = tempfile::tempdir().unwrap();
        let root = fixtures::build_fixture_root(dir.path());
        let executor = Executor::new(root);
        let item = DatasetItem {
            item_id: "x".into(),
            question: "q".into(),
            evidence: String::new(),
            db_id: "molecules".into(),
            gold_sql: "SELECT count(*) FROM bond WHERE bond_type = '#'".into(),
        };
        let jobs = vec![
            JudgeJob { item: item.clone(), pred_sql: item.gold_sql.clone() },
            JudgeJob { item: item.clone(), pred_sql: fixtures::RUNAWAY_QUERY.into() },
            JudgeJob { item: item.clone(), pred_sql: item.gold_sql.clone() },
        ];
        let mut config = cfg();
        config.timeout_ms = 100;
        let results = executor.judge_batch(&jobs, &config);
        assert_eq!(results[0].as_ref().unwrap().verdict, Verdict::Correct);
        assert_eq!(results[1].as_ref().unwrap().verdict, Verdict::Nonexecutable);
        assert_eq!(results[2].as_ref().unwrap().verdict, Verdict::Correct);
    }
}
