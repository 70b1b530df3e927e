//! Benchmark corpus ingestion, schema catalogs, and database prompts.
//!
//! Databases follow the Bird/Spider on-disk layout:
//! `<db_root>/<db_id>/<db_id>.sqlite`. Schema catalogs are introspected
//! directly from the database file and are the single source of truth both
//! for prompt construction and for hallucinated-identifier checks.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use crate::executor::CellValue;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a JSON array of records: {source}")]
    NotAnArray {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("record {index}: missing or empty field `{field}`")]
    MalformedRecord { index: usize, field: &'static str },
    #[error("duplicate item_id `{item_id}` (records {first} and {second})")]
    DuplicateId {
        item_id: String,
        first: usize,
        second: usize,
    },
    #[error("cannot open database {path}: {message}")]
    UnreadableDb { path: String, message: String },
    #[error("database {path} has no user tables")]
    EmptySchema { path: String },
    #[error("unknown db_id `{db_id}` under {root}")]
    UnknownDb { db_id: String, root: String },
}

/// One benchmark sample: a question, its database, and the gold SQL.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DatasetItem {
    pub item_id: String,
    pub question: String,
    /// External-knowledge hint; empty for datasets that ship none.
    #[serde(default)]
    pub evidence: String,
    pub db_id: String,
    pub gold_sql: String,
}

/// One column: declared type, optional comment, and up to `value_budget`
/// example cell values drawn from stored rows.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ColumnDef {
    pub name: String,
    pub declared_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    #[serde(default)]
    pub example_values: Vec<CellValue>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
    }
}

/// Full schema of one database. Identifiers are compared case-insensitively
/// (SQL default) but rendered in stored case.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SchemaCatalog {
    pub db_id: String,
    pub tables: Vec<TableDef>,
    /// (table, column) pairs.
    pub primary_keys: Vec<(String, String)>,
    /// ((from_table, from_column), (to_table, to_column)) pairs.
    pub foreign_keys: Vec<((String, String), (String, String))>,
}

impl SchemaCatalog {
    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables
            .iter()
            .find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn has_table(&self, name: &str) -> bool {
        self.table(name).is_some()
    }

    pub fn has_column(&self, table: &str, column: &str) -> bool {
        self.table(table)
            .map(|t| t.column(column).is_some())
            .unwrap_or(false)
    }

    /// Checks the structural invariants: unique table names, unique column
    /// names per table, and key endpoints that resolve.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = HashSet::new();
        for table in &self.tables {
            if !seen.insert(table.name.to_lowercase()) {
                return Err(format!("duplicate table name `{}`", table.name));
            }
            let mut cols = HashSet::new();
            for col in &table.columns {
                if !cols.insert(col.name.to_lowercase()) {
                    return Err(format!(
                        "duplicate column `{}` in table `{}`",
                        col.name, table.name
                    ));
                }
            }
        }
        for (table, column) in &self.primary_keys {
            if !self.has_column(table, column) {
                return Err(format!("primary key {table}.{column} does not resolve"));
            }
        }
        for (from, to) in &self.foreign_keys {
            for (table, column) in [from, to] {
                if !self.has_column(table, column) {
                    return Err(format!("foreign key endpoint {table}.{column} does not resolve"));
                }
            }
        }
        Ok(())
    }
}

/// Resolves `db_id` to database files under the Bird/Spider directory layout.
#[derive(Debug, Clone)]
pub struct DbRoot {
    root: PathBuf,
}

impl DbRoot {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn db_file(&self, db_id: &str) -> Result<PathBuf, CorpusError> {
        let path = self.root.join(db_id).join(format!("{db_id}.sqlite"));
        if path.is_file() {
            Ok(path)
        } else {
            Err(CorpusError::UnknownDb {
                db_id: db_id.to_string(),
                root: self.root.display().to_string(),
            })
        }
    }

    /// Test-suite instances for `db_id`: every `*.sqlite` under
    /// `<root>/<db_id>/`, sorted by file name for a stable instance order.
    pub fn suite_files(&self, db_id: &str) -> Result<Vec<PathBuf>, CorpusError> {
        let dir = self.root.join(db_id);
        let entries = fs::read_dir(&dir).map_err(|source| CorpusError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "sqlite"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(CorpusError::UnknownDb {
                db_id: db_id.to_string(),
                root: self.root.display().to_string(),
            });
        }
        Ok(files)
    }
}

/// Source benchmark flavor; controls field mapping only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Bird,
    Spider,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bird" => Ok(Self::Bird),
            "spider" => Ok(Self::Spider),
            other => Err(format!("unknown corpus format `{other}` (expected bird or spider)")),
        }
    }
}

/// Loads a benchmark JSON array into normalized items, preserving file order.
///
/// Bird records carry `question_id`, `question`, `evidence`, `db_id`, `SQL`;
/// Spider records carry `question`, `db_id`, `query` and get empty evidence.
/// Records without an id field are keyed by their zero-based index.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<DatasetItem>, CorpusError> {
    let display = path.display().to_string();
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let records: Vec<serde_json::Map<String, serde_json::Value>> = serde_json::from_str(&raw)
        .map_err(|source| CorpusError::NotAnArray {
            path: display,
            source,
        })?;

    let mut items = Vec::with_capacity(records.len());
    let mut seen: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for (index, record) in records.iter().enumerate() {
        let get_str = |field: &'static str| -> Option<String> {
            record.get(field).and_then(|v| match v {
                serde_json::Value::String(s) => Some(s.clone()),
                serde_json::Value::Number(n) => Some(n.to_string()),
                _ => None,
            })
        };
        let question = get_str("question")
            .filter(|s| !s.trim().is_empty())
            .ok_or(CorpusError::MalformedRecord {
                index,
                field: "question",
            })?;
        let db_id = get_str("db_id")
            .filter(|s| !s.trim().is_empty())
            .ok_or(CorpusError::MalformedRecord {
                index,
                field: "db_id",
            })?;
        let sql_field = match format {
            CorpusFormat::Bird => "SQL",
            CorpusFormat::Spider => "query",
        };
        let gold_sql = get_str(sql_field)
            .filter(|s| !s.trim().is_empty())
            .ok_or(CorpusError::MalformedRecord {
                index,
                field: sql_field,
            })?;
        let evidence = match format {
            CorpusFormat::Bird => get_str("evidence").unwrap_or_default(),
            CorpusFormat::Spider => String::new(),
        };
        let item_id = get_str("question_id").unwrap_or_else(|| index.to_string());

        if let Some(&first) = seen.get(&item_id) {
            return Err(CorpusError::DuplicateId {
                item_id,
                first,
                second: index,
            });
        }
        seen.insert(item_id.clone(), index);
        items.push(DatasetItem {
            item_id,
            question,
            evidence,
            db_id,
            gold_sql,
        });
    }
    Ok(items)
}

fn open_readonly(path: &Path) -> Result<Connection, CorpusError> {
    Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| CorpusError::UnreadableDb {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Enumerates all user tables, columns, and keys of a SQLite file, filling
/// `value_budget` example values per column from the first rows in
/// primary-key order (rowid order when the table has no primary key).
///
/// SQLite stores no column comments, so `comment` is always `None` here;
/// catalogs built from richer metadata may populate it.
pub fn introspect_schema(db_file: &Path, value_budget: usize) -> Result<SchemaCatalog, CorpusError> {
    let conn = open_readonly(db_file)?;
    let display = db_file.display().to_string();
    let db_id = db_file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let unreadable = |e: rusqlite::Error| CorpusError::UnreadableDb {
        path: display.clone(),
        message: e.to_string(),
    };

    let mut table_names: Vec<String> = Vec::new();
    {
        let mut stmt = conn
            .prepare(
                "SELECT name FROM sqlite_master \
                 WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
            )
            .map_err(unreadable)?;
        let rows = stmt
            .query_map([], |row| row.get::<_, String>(0))
            .map_err(unreadable)?;
        for name in rows {
            table_names.push(name.map_err(unreadable)?);
        }
    }
    if table_names.is_empty() {
        return Err(CorpusError::EmptySchema { path: display });
    }

    let mut tables = Vec::with_capacity(table_names.len());
    let mut primary_keys = Vec::new();
    let mut foreign_keys = Vec::new();

    for table_name in &table_names {
        let quoted = quote_ident(table_name);
        // (cid, name, type, notnull, dflt_value, pk)
        let mut columns = Vec::new();
        let mut pk_cols: Vec<(i64, String)> = Vec::new();
        {
            let mut stmt = conn
                .prepare(&format!("PRAGMA table_info({quoted})"))
                .map_err(unreadable)?;
            let rows = stmt
                .query_map([], |row| {
                    Ok((
                        row.get::<_, String>(1)?,
                        row.get::<_, Option<String>>(2)?.unwrap_or_default(),
                        row.get::<_, i64>(5)?,
                    ))
                })
                .map_err(unreadable)?;
            for row in rows {
                let (name, declared_type, pk) = row.map_err(unreadable)?;
                if pk > 0 {
                    pk_cols.push((pk, name.clone()));
                }
                columns.push(ColumnDef {
                    name,
                    declared_type,
                    comment: None,
                    example_values: Vec::new(),
                });
            }
        }
        pk_cols.sort_by_key(|(ord, _)| *ord);
        let order_clause = if pk_cols.is_empty() {
            "rowid".to_string()
        } else {
            pk_cols
                .iter()
                .map(|(_, c)| quote_ident(c))
                .collect::<Vec<_>>()
                .join(", ")
        };
        for (_, col) in &pk_cols {
            primary_keys.push((table_name.clone(), col.clone()));
        }

        if value_budget > 0 {
            let col_list = columns
                .iter()
                .map(|c| quote_ident(&c.name))
                .collect::<Vec<_>>()
                .join(", ");
            let sql = format!(
                "SELECT {col_list} FROM {quoted} ORDER BY {order_clause} LIMIT {value_budget}"
            );
            let mut stmt = conn.prepare(&sql).map_err(unreadable)?;
            let ncols = columns.len();
            let mut rows = stmt.query([]).map_err(unreadable)?;
            while let Some(row) = rows.next().map_err(unreadable)? {
                for (i, col) in columns.iter_mut().enumerate().take(ncols) {
                    let value = row.get_ref(i).map_err(unreadable)?;
                    col.example_values.push(CellValue::from_value_ref(value));
                }
            }
        }

        {
            // (id, seq, table, from, to, on_update, on_delete, match)
            let mut stmt = conn
                .prepare(&format!("PRAGMA foreign_key_list({quoted})"))
                .map_err(unreadable)?;
            let rows = stmt
                .query_map([], |row| {
                    Ok((
                        row.get::<_, String>(2)?,
                        row.get::<_, String>(3)?,
                        row.get::<_, Option<String>>(4)?,
                    ))
                })
                .map_err(unreadable)?;
            for row in rows {
                let (to_table, from_col, to_col) = row.map_err(unreadable)?;
                // A NULL `to` column means "the referenced table's primary key";
                // resolved after all tables are read.
                foreign_keys.push((
                    (table_name.clone(), from_col),
                    (to_table, to_col.unwrap_or_default()),
                ));
            }
        }

        tables.push(TableDef {
            name: table_name.clone(),
            columns,
        });
    }

    for ((_, _), (to_table, to_col)) in foreign_keys.iter_mut() {
        if to_col.is_empty() {
            if let Some((_, pk)) = primary_keys.iter().find(|(t, _)| t.eq_ignore_ascii_case(to_table))
            {
                *to_col = pk.clone();
            }
        }
    }
    // Drop foreign keys whose endpoints do not resolve (dangling references
    // exist in the wild; the catalog invariant requires both ends to exist).
    let catalog = SchemaCatalog {
        db_id,
        tables,
        primary_keys,
        foreign_keys: Vec::new(),
    };
    let foreign_keys = foreign_keys
        .into_iter()
        .filter(|(from, to)| {
            catalog.has_column(&from.0, &from.1) && catalog.has_column(&to.0, &to.1)
        })
        .collect();
    let catalog = SchemaCatalog {
        foreign_keys,
        ..catalog
    };
    debug_assert!(catalog.validate().is_ok());
    Ok(catalog)
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

/// Options for [`build_database_prompt`].
#[derive(Debug, Clone, Default)]
pub struct PromptOptions {
    /// When set, the schema section is cut back to whole table lines until
    /// the full prompt fits in this many characters. Key, question, and
    /// evidence lines are never dropped.
    pub char_budget: Option<usize>,
}

/// Serializes a catalog plus question/evidence into the database prompt.
///
/// Grammar, per table:
/// `Table {t}, columns = [ {t}.{c} ( {type} | comment : {comment} | values : v1 , v2 ) , ... ]`
/// with the comment clause omitted when absent and the values clause omitted
/// when no example values are stored. A trailing keys section lists primary
/// keys then foreign keys, and the question and evidence follow as labeled
/// lines (the evidence line is omitted when empty). Output is deterministic:
/// identical inputs yield byte-identical text.
pub fn build_database_prompt(catalog: &SchemaCatalog, question: &str, evidence: &str) -> String {
    build_database_prompt_with(catalog, question, evidence, &PromptOptions::default())
}

/// The schema part of the prompt alone: table lines followed by the keys
/// section. Used both by the full prompt and by synthesis requests, which
/// label the sections themselves.
pub fn schema_prompt(catalog: &SchemaCatalog) -> String {
    let (table_lines, keys) = schema_sections(catalog);
    let mut out = String::new();
    for line in &table_lines {
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(&keys);
    out.truncate(out.trim_end_matches('\n').len());
    out
}

fn schema_sections(catalog: &SchemaCatalog) -> (Vec<String>, String) {
    let mut table_lines: Vec<String> = Vec::with_capacity(catalog.tables.len());
    for table in &catalog.tables {
        let mut line = format!("Table {}, columns = [ ", table.name);
        for (i, col) in table.columns.iter().enumerate() {
            if i > 0 {
                line.push_str(" , ");
            }
            line.push_str(&render_column(&table.name, col));
        }
        line.push_str(" ]");
        table_lines.push(line);
    }

    let mut keys = String::new();
    if !catalog.primary_keys.is_empty() {
        let rendered = catalog
            .primary_keys
            .iter()
            .map(|(t, c)| format!("{t}.{c}"))
            .collect::<Vec<_>>()
            .join(" , ");
        let _ = writeln!(keys, "Primary keys = [ {rendered} ]");
    }
    if !catalog.foreign_keys.is_empty() {
        let rendered = catalog
            .foreign_keys
            .iter()
            .map(|((ft, fc), (tt, tc))| format!("{ft}.{fc} = {tt}.{tc}"))
            .collect::<Vec<_>>()
            .join(" , ");
        let _ = writeln!(keys, "Foreign keys = [ {rendered} ]");
    }
    (table_lines, keys)
}

pub fn build_database_prompt_with(
    catalog: &SchemaCatalog,
    question: &str,
    evidence: &str,
    options: &PromptOptions,
) -> String {
    let (table_lines, keys) = schema_sections(catalog);

    let mut tail = keys;
    let _ = writeln!(tail, "Question: {question}");
    if !evidence.trim().is_empty() {
        let _ = writeln!(tail, "External Knowledge: {evidence}");
    }

    let assemble = |tables: &[String]| {
        let mut out = String::new();
        for line in tables {
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(&tail);
        // Labeled lines end with \n from writeln; trim the final newline so
        // the prompt ends exactly at the last label line.
        out.truncate(out.trim_end_matches('\n').len());
        out
    };

    let full = assemble(&table_lines);
    match options.char_budget {
        Some(budget) if full.chars().count() > budget => {
            let mut kept = table_lines.clone();
            while !kept.is_empty() {
                kept.pop();
                let candidate = assemble(&kept);
                if candidate.chars().count() <= budget {
                    return candidate;
                }
            }
            assemble(&[])
        }
        _ => full,
    }
}

fn render_column(table: &str, col: &ColumnDef) -> String {
    let mut clauses: Vec<String> = Vec::new();
    let ty = col.declared_type.trim().to_lowercase();
    if !ty.is_empty() {
        clauses.push(ty);
    }
    if let Some(comment) = &col.comment {
        clauses.push(format!("comment : {comment}"));
    }
    if !col.example_values.is_empty() {
        let values = col
            .example_values
            .iter()
            .map(render_value)
            .collect::<Vec<_>>()
            .join(" , ");
        clauses.push(format!("values : {values}"));
    }
    format!("{table}.{} ( {} )", col.name, clauses.join(" | "))
}

/// Example-value rendering: NULL as the literal `None`, strings unquoted,
/// numbers in shortest round-trip decimal form, blobs as hex.
fn render_value(value: &CellValue) -> String {
    match value {
        CellValue::Null => "None".to_string(),
        CellValue::Integer(v) => v.to_string(),
        CellValue::Real(v) => format!("{v}"),
        CellValue::Text(s) => s.clone(),
        CellValue::Blob(bytes) => bytes.iter().map(|b| format!("{b:02x}")).collect(),
    }
}
