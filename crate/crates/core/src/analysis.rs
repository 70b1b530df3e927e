//! SQL parsing and schema checking, mechanical error-taxonomy labeling,
//! fix-rate and transition-matrix computation, and output statistics.
//!
//! The 17-way error taxonomy is largely a human judgment; only the
//! mechanically decidable subset is automated here (G, B4, F1, E2, E1, B6),
//! everything else arrives through manual label ingestion and overrides the
//! automatic labels.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{self, Statement, TableFactor, Visit, Visitor};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;

use crate::corpus::SchemaCatalog;
use crate::executor::{results_match, ExecConfig, ExecutionOutcome, Verdict};
use crate::rollouts::Rollout;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("missing execution outcome for item {item_id}")]
    MissingOutcome { item_id: String },
    #[error("unknown error category `{0}`")]
    UnknownCategory(String),
    #[error("manual label for item {item_id} targets a CORRECT prediction; G is reserved")]
    LabelOnCorrect { item_id: String },
    #[error("checkpoints label different item sets: {0}")]
    ItemSetMismatch(String),
    #[error("empty rollout set")]
    EmptySet,
    #[error(transparent)]
    Jsonl(#[from] crate::jsonl::JsonlError),
}

/// Parse failure with the parser's position message preserved.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct ParseFailure {
    pub message: String,
}

/// Identifier usage extracted from one parsed statement. Identifier sets are
/// deduplicated and case-folded; aliases are resolved where determinable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SqlAst {
    /// Base tables referenced in FROM/JOIN (CTE names excluded).
    pub tables: BTreeSet<String>,
    /// Every column identifier that appears, qualified or not.
    pub columns: BTreeSet<String>,
    /// alias -> base table, for aliases of real tables only.
    pub alias_to_table: BTreeMap<String, String>,
    /// (qualifier, column) references such as `T1.code`.
    pub qualified_columns: BTreeSet<(String, String)>,
    pub unqualified_columns: BTreeSet<String>,
    /// Names that do not live in the schema: SELECT/CTE aliases and CTE
    /// column lists. Excluded from hallucination checks.
    pub synthetic_names: BTreeSet<String>,
    /// Qualifiers that refer to derived tables or CTEs; columns under them
    /// cannot be checked against the catalog.
    pub opaque_qualifiers: BTreeSet<String>,
    pub has_top_level_order_by: bool,
    pub has_top_level_limit: bool,
    pub has_distinct: bool,
}

#[derive(Default)]
struct IdentCollector {
    ast: SqlAst,
}

impl Visitor for IdentCollector {
    type Break = ();

    fn pre_visit_query(&mut self, query: &ast::Query) -> ControlFlow<()> {
        if let Some(with) = &query.with {
            for cte in &with.cte_tables {
                let name = cte.alias.name.value.to_lowercase();
                self.ast.synthetic_names.insert(name.clone());
                self.ast.opaque_qualifiers.insert(name);
                for col in &cte.alias.columns {
                    self.ast.synthetic_names.insert(col.value.to_lowercase());
                }
            }
        }
        if let ast::SetExpr::Select(select) = query.body.as_ref() {
            for item in &select.projection {
                if let ast::SelectItem::ExprWithAlias { alias, .. } = item {
                    self.ast.synthetic_names.insert(alias.value.to_lowercase());
                }
            }
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_table_factor(&mut self, table_factor: &TableFactor) -> ControlFlow<()> {
        match table_factor {
            TableFactor::Table { name, alias, .. } => {
                let table = name
                    .0
                    .last()
                    .map(|i| i.value.to_lowercase())
                    .unwrap_or_default();
                self.ast.tables.insert(table.clone());
                if let Some(alias) = alias {
                    self.ast
                        .alias_to_table
                        .insert(alias.name.value.to_lowercase(), table);
                }
            }
            TableFactor::Derived { alias: Some(alias), .. } => {
                let name = alias.name.value.to_lowercase();
                self.ast.synthetic_names.insert(name.clone());
                self.ast.opaque_qualifiers.insert(name);
            }
            _ => {}
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, expr: &ast::Expr) -> ControlFlow<()> {
        match expr {
            ast::Expr::Identifier(ident) => {
                let name = ident.value.to_lowercase();
                self.ast.columns.insert(name.clone());
                self.ast.unqualified_columns.insert(name);
            }
            ast::Expr::CompoundIdentifier(parts) if parts.len() >= 2 => {
                let qualifier = parts[parts.len() - 2].value.to_lowercase();
                let column = parts[parts.len() - 1].value.to_lowercase();
                self.ast.columns.insert(column.clone());
                self.ast.qualified_columns.insert((qualifier, column));
            }
            _ => {}
        }
        ControlFlow::Continue(())
    }
}

/// Parses one statement in the embedded engine's dialect and extracts
/// identifier usage plus the top-level ORDER BY/LIMIT/DISTINCT flags.
pub fn parse_sql(sql: &str) -> Result<SqlAst, ParseFailure> {
    let statements = Parser::parse_sql(&SQLiteDialect {}, sql).map_err(|e| ParseFailure {
        message: e.to_string(),
    })?;
    let statement = statements.first().ok_or_else(|| ParseFailure {
        message: "empty statement".to_string(),
    })?;

    let mut collector = IdentCollector::default();
    let _ = statement.visit(&mut collector);
    let mut ast = collector.ast;

    if let Statement::Query(query) = statement {
        ast.has_top_level_order_by = query
            .order_by
            .as_ref()
            .is_some_and(|o| !o.exprs.is_empty());
        ast.has_top_level_limit = query.limit.is_some();
        if let ast::SetExpr::Select(select) = query.body.as_ref() {
            ast.has_distinct = select.distinct.is_some();
        }
    }
    // CTE names parse as table factors too; they are not base tables.
    let synthetic: Vec<String> = ast
        .tables
        .iter()
        .filter(|t| ast.opaque_qualifiers.contains(*t))
        .cloned()
        .collect();
    for name in synthetic {
        ast.tables.remove(&name);
    }
    Ok(ast)
}

/// True when the statement parses as a query with a top-level ORDER BY.
/// Falls back to a token scan when the statement does not parse, so verdicts
/// on unparseable-but-executable gold queries stay reasonable.
pub fn has_top_level_order_by(sql: &str) -> bool {
    match parse_sql(sql) {
        Ok(ast) => ast.has_top_level_order_by,
        Err(_) => {
            let upper = sql.to_uppercase();
            let mut depth = 0i32;
            let bytes = upper.as_bytes();
            let mut i = 0;
            while i < bytes.len() {
                match bytes[i] {
                    b'(' => depth += 1,
                    b')' => depth -= 1,
                    b'\'' => {
                        i += 1;
                        while i < bytes.len() && bytes[i] != b'\'' {
                            i += 1;
                        }
                    }
                    b'O' if depth == 0 && bytes[i..].starts_with(b"ORDER BY") => return true,
                    _ => {}
                }
                i += 1;
            }
            false
        }
    }
}

/// The error taxonomy plus G (correct) and UNCLASSIFIED.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorCategory {
    G,
    A1,
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
    C1,
    C2,
    D1,
    D2,
    D3,
    E1,
    E2,
    E3,
    E4,
    F1,
    #[serde(rename = "UNCLASSIFIED")]
    Unclassified,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 19] = [
        ErrorCategory::G,
        ErrorCategory::A1,
        ErrorCategory::B1,
        ErrorCategory::B2,
        ErrorCategory::B3,
        ErrorCategory::B4,
        ErrorCategory::B5,
        ErrorCategory::B6,
        ErrorCategory::C1,
        ErrorCategory::C2,
        ErrorCategory::D1,
        ErrorCategory::D2,
        ErrorCategory::D3,
        ErrorCategory::E1,
        ErrorCategory::E2,
        ErrorCategory::E3,
        ErrorCategory::E4,
        ErrorCategory::F1,
        ErrorCategory::Unclassified,
    ];

    /// Taxonomy row label, e.g. `[B6] NULL/DISTINCT`.
    pub fn display_name(&self) -> &'static str {
        match self {
            ErrorCategory::G => "G",
            ErrorCategory::A1 => "[A1] EK",
            ErrorCategory::B1 => "[B1] Table",
            ErrorCategory::B2 => "[B2] JOIN",
            ErrorCategory::B3 => "[B3] Column",
            ErrorCategory::B4 => "[B4] Hallucination",
            ErrorCategory::B5 => "[B5] Condition",
            ErrorCategory::B6 => "[B6] NULL/DISTINCT",
            ErrorCategory::C1 => "[C1] String/Number",
            ErrorCategory::C2 => "[C2] Date",
            ErrorCategory::D1 => "[D1] Mathematical Formula",
            ErrorCategory::D2 => "[D2] Aggregation",
            ErrorCategory::D3 => "[D3] Complex Operation",
            ErrorCategory::E1 => "[E1] Redundant/Incomplete",
            ErrorCategory::E2 => "[E2] Column Sequence",
            ErrorCategory::E3 => "[E3] ORDER BY/LIMIT",
            ErrorCategory::E4 => "[E4] Format",
            ErrorCategory::F1 => "[F1] Syntax",
            ErrorCategory::Unclassified => "UNCLASSIFIED",
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorCategory::G => "G",
            ErrorCategory::A1 => "A1",
            ErrorCategory::B1 => "B1",
            ErrorCategory::B2 => "B2",
            ErrorCategory::B3 => "B3",
            ErrorCategory::B4 => "B4",
            ErrorCategory::B5 => "B5",
            ErrorCategory::B6 => "B6",
            ErrorCategory::C1 => "C1",
            ErrorCategory::C2 => "C2",
            ErrorCategory::D1 => "D1",
            ErrorCategory::D2 => "D2",
            ErrorCategory::D3 => "D3",
            ErrorCategory::E1 => "E1",
            ErrorCategory::E2 => "E2",
            ErrorCategory::E3 => "E3",
            ErrorCategory::E4 => "E4",
            ErrorCategory::F1 => "F1",
            ErrorCategory::Unclassified => "UNCLASSIFIED",
        }
    }
}

impl std::str::FromStr for ErrorCategory {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorCategory::ALL
            .iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| AnalysisError::UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "AUTO")]
    Auto,
    #[serde(rename = "MANUAL")]
    Manual,
}

/// One labeled prediction; the JSONL record of the labels artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorLabel {
    pub item_id: String,
    pub checkpoint_tag: String,
    pub category: ErrorCategory,
    pub provenance: Provenance,
}

/// Width cap for the column-permutation search in the E2 rung; wider results
/// skip the check and fall through.
pub const PERMUTATION_WIDTH_CAP: usize = 8;

/// Mechanically labels one judged prediction. The decision ladder:
///
/// 1. verdict CORRECT -> G
/// 2. a referenced identifier is absent from the catalog -> B4
/// 3. verdict NONEXECUTABLE -> F1
/// 4. results equal under a non-identity column permutation -> E2
/// 5. one side's columns are a strict order-preserving projection of the
///    other's, with projected rows matching -> E1
/// 6. results match after DISTINCT on both sides, or after dropping
///    NULL-containing rows from exactly one side -> B6
/// 7. otherwise UNCLASSIFIED
///
/// Hallucination outranks the syntax rung: a made-up identifier also fails
/// execution, and the taxonomy treats the hallucination as primary.
pub fn auto_label(
    rollout: &Rollout,
    gold_outcome: &ExecutionOutcome,
    pred_outcome: Option<&ExecutionOutcome>,
    catalog: &SchemaCatalog,
    cfg: &ExecConfig,
) -> Result<ErrorLabel, AnalysisError> {
    let verdict = rollout.verdict.ok_or_else(|| AnalysisError::MissingOutcome {
        item_id: rollout.item_id.clone(),
    })?;
    let category = auto_category(rollout, verdict, gold_outcome, pred_outcome, catalog, cfg)?;
    Ok(ErrorLabel {
        item_id: rollout.item_id.clone(),
        checkpoint_tag: rollout.checkpoint_tag.clone(),
        category,
        provenance: Provenance::Auto,
    })
}

fn auto_category(
    rollout: &Rollout,
    verdict: Verdict,
    gold_outcome: &ExecutionOutcome,
    pred_outcome: Option<&ExecutionOutcome>,
    catalog: &SchemaCatalog,
    cfg: &ExecConfig,
) -> Result<ErrorCategory, AnalysisError> {
    if verdict == Verdict::Correct {
        return Ok(ErrorCategory::G);
    }
    if let Some(sql) = rollout.extracted_sql.as_deref() {
        if let Ok(ast) = parse_sql(sql) {
            if references_unknown_identifier(&ast, catalog) {
                return Ok(ErrorCategory::B4);
            }
        }
    }
    if verdict == Verdict::Nonexecutable {
        return Ok(ErrorCategory::F1);
    }
    let pred = pred_outcome.ok_or_else(|| AnalysisError::MissingOutcome {
        item_id: rollout.item_id.clone(),
    })?;
    if !gold_outcome.is_rows() || !pred.is_rows() {
        return Err(AnalysisError::MissingOutcome {
            item_id: rollout.item_id.clone(),
        });
    }
    if matches_under_column_permutation(gold_outcome, pred, cfg) {
        return Ok(ErrorCategory::E2);
    }
    if matches_under_projection(gold_outcome, pred, cfg) {
        return Ok(ErrorCategory::E1);
    }
    if matches_under_distinct_or_null_drop(gold_outcome, pred, cfg) {
        return Ok(ErrorCategory::B6);
    }
    Ok(ErrorCategory::Unclassified)
}

fn references_unknown_identifier(ast: &SqlAst, catalog: &SchemaCatalog) -> bool {
    for table in &ast.tables {
        if !catalog.has_table(table) {
            return true;
        }
    }
    let real_tables: Vec<&str> = ast
        .tables
        .iter()
        .filter(|t| catalog.has_table(t))
        .map(|s| s.as_str())
        .collect();
    for (qualifier, column) in &ast.qualified_columns {
        if ast.opaque_qualifiers.contains(qualifier) {
            continue;
        }
        let table = ast
            .alias_to_table
            .get(qualifier)
            .map(|s| s.as_str())
            .or_else(|| catalog.has_table(qualifier).then_some(qualifier.as_str()));
        match table {
            Some(table) => {
                if !catalog.has_column(table, column) {
                    return true;
                }
            }
            // Unknown qualifier that is not a derived table: the relation
            // itself is made up.
            None => return true,
        }
    }
    for column in &ast.unqualified_columns {
        if ast.synthetic_names.contains(column) {
            continue;
        }
        if real_tables.is_empty() {
            continue;
        }
        if !real_tables.iter().any(|t| catalog.has_column(t, column)) {
            return true;
        }
    }
    false
}

fn width_of(outcome: &ExecutionOutcome) -> usize {
    outcome.rows.first().map(|r| r.len()).unwrap_or(0)
}

fn permute_rows(outcome: &ExecutionOutcome, perm: &[usize]) -> ExecutionOutcome {
    let rows = outcome
        .rows
        .iter()
        .map(|row| perm.iter().map(|&i| row[i].clone()).collect())
        .collect();
    ExecutionOutcome {
        status: outcome.status,
        rows,
        error_msg: None,
        elapsed_ms: outcome.elapsed_ms,
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..n).collect();
    fn heap(k: usize, arr: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(arr.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, arr, out);
            if k.is_multiple_of(2) {
                arr.swap(i, k - 1);
            } else {
                arr.swap(0, k - 1);
            }
        }
    }
    heap(n, &mut current, &mut out);
    out
}

fn matches_under_column_permutation(
    gold: &ExecutionOutcome,
    pred: &ExecutionOutcome,
    cfg: &ExecConfig,
) -> bool {
    let width = width_of(gold);
    if width < 2 || width != width_of(pred) || width > PERMUTATION_WIDTH_CAP {
        return false;
    }
    for perm in permutations(width) {
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            continue;
        }
        if results_match(gold, &permute_rows(pred, &perm), false, cfg) {
            return true;
        }
    }
    false
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack: Vec<usize> = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, stack: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if stack.len() == k {
            out.push(stack.clone());
            return;
        }
        for i in start..n {
            stack.push(i);
            rec(i + 1, n, k, stack, out);
            stack.pop();
        }
    }
    rec(0, n, k, &mut stack, &mut out);
    out
}

fn project_rows(outcome: &ExecutionOutcome, cols: &[usize]) -> ExecutionOutcome {
    permute_rows(outcome, cols)
}

fn matches_under_projection(
    gold: &ExecutionOutcome,
    pred: &ExecutionOutcome,
    cfg: &ExecConfig,
) -> bool {
    let (gw, pw) = (width_of(gold), width_of(pred));
    if gw == pw || gw == 0 || pw == 0 || gw.max(pw) > PERMUTATION_WIDTH_CAP {
        return false;
    }
    let (wide, narrow, wide_w, narrow_w) = if pw > gw {
        (pred, gold, pw, gw)
    } else {
        (gold, pred, gw, pw)
    };
    combinations(wide_w, narrow_w)
        .iter()
        .any(|cols| results_match(narrow, &project_rows(wide, cols), false, cfg))
}

fn dedup_rows(outcome: &ExecutionOutcome) -> ExecutionOutcome {
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    for row in &outcome.rows {
        let key = format!("{row:?}");
        if seen.insert(key) {
            rows.push(row.clone());
        }
    }
    ExecutionOutcome {
        status: outcome.status,
        rows,
        error_msg: None,
        elapsed_ms: outcome.elapsed_ms,
    }
}

fn drop_null_rows(outcome: &ExecutionOutcome) -> ExecutionOutcome {
    let rows = outcome
        .rows
        .iter()
        .filter(|row| !row.iter().any(|c| matches!(c, crate::executor::CellValue::Null)))
        .cloned()
        .collect();
    ExecutionOutcome {
        status: outcome.status,
        rows,
        error_msg: None,
        elapsed_ms: outcome.elapsed_ms,
    }
}

fn matches_under_distinct_or_null_drop(
    gold: &ExecutionOutcome,
    pred: &ExecutionOutcome,
    cfg: &ExecConfig,
) -> bool {
    if width_of(gold) != width_of(pred) && width_of(gold) != 0 && width_of(pred) != 0 {
        return false;
    }
    if results_match(&dedup_rows(gold), &dedup_rows(pred), false, cfg) {
        return true;
    }
    results_match(&drop_null_rows(gold), pred, false, cfg)
        || results_match(gold, &drop_null_rows(pred), false, cfg)
}

/// Parses a manual-labels JSONL file. Categories must be known and G may not
/// be assigned by hand.
pub fn ingest_manual_labels(path: &std::path::Path) -> Result<Vec<ErrorLabel>, AnalysisError> {
    #[derive(Deserialize)]
    struct RawLabel {
        item_id: String,
        checkpoint_tag: String,
        category: String,
        #[serde(default)]
        #[allow(dead_code)]
        provenance: Option<String>,
    }
    let raw: Vec<RawLabel> = crate::jsonl::read_jsonl(path)?;
    let mut labels = Vec::with_capacity(raw.len());
    for record in raw {
        let category: ErrorCategory = record.category.parse()?;
        if category == ErrorCategory::G {
            return Err(AnalysisError::LabelOnCorrect {
                item_id: record.item_id,
            });
        }
        labels.push(ErrorLabel {
            item_id: record.item_id,
            checkpoint_tag: record.checkpoint_tag,
            category,
            provenance: Provenance::Manual,
        });
    }
    Ok(labels)
}

/// Applies manual overrides on top of automatic labels for the same
/// (item, checkpoint). Overriding a CORRECT prediction is an error: G is
/// reserved for execution-verified predictions.
pub fn apply_manual_overrides(
    auto: &[ErrorLabel],
    manual: &[ErrorLabel],
) -> Result<Vec<ErrorLabel>, AnalysisError> {
    let mut by_key: BTreeMap<(String, String), ErrorLabel> = auto
        .iter()
        .map(|l| ((l.item_id.clone(), l.checkpoint_tag.clone()), l.clone()))
        .collect();
    for label in manual {
        let key = (label.item_id.clone(), label.checkpoint_tag.clone());
        if let Some(existing) = by_key.get(&key) {
            if existing.category == ErrorCategory::G {
                return Err(AnalysisError::LabelOnCorrect {
                    item_id: label.item_id.clone(),
                });
            }
        }
        by_key.insert(key, label.clone());
    }
    Ok(by_key.into_values().collect())
}

/// Per-category correction counts between two checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixRate {
    pub category: ErrorCategory,
    pub fixed: usize,
    pub total: usize,
}

impl FixRate {
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.fixed as f64 / self.total as f64)
    }

    /// `40.0 (12/30)` presentation; `-` when the category had no errors.
    pub fn render(&self) -> String {
        match self.rate() {
            Some(rate) => format!("{:.1} ({}/{})", rate * 100.0, self.fixed, self.total),
            None => "-".to_string(),
        }
    }
}

fn label_map(labels: &[ErrorLabel]) -> BTreeMap<&str, ErrorCategory> {
    labels
        .iter()
        .map(|l| (l.item_id.as_str(), l.category))
        .collect()
}

fn check_same_items(
    before: &BTreeMap<&str, ErrorCategory>,
    after: &BTreeMap<&str, ErrorCategory>,
) -> Result<(), AnalysisError> {
    if before.len() != after.len() || before.keys().ne(after.keys()) {
        let only_before: Vec<_> = before.keys().filter(|k| !after.contains_key(*k)).collect();
        let only_after: Vec<_> = after.keys().filter(|k| !before.contains_key(*k)).collect();
        return Err(AnalysisError::ItemSetMismatch(format!(
            "{} items only in before, {} only in after",
            only_before.len(),
            only_after.len()
        )));
    }
    Ok(())
}

/// For each non-G category: how many of its items at checkpoint A became G
/// at checkpoint B.
pub fn fix_rates(
    labels_before: &[ErrorLabel],
    labels_after: &[ErrorLabel],
) -> Result<Vec<FixRate>, AnalysisError> {
    let before = label_map(labels_before);
    let after = label_map(labels_after);
    check_same_items(&before, &after)?;
    let mut rates = Vec::new();
    for category in ErrorCategory::ALL {
        if category == ErrorCategory::G {
            continue;
        }
        let items: Vec<&str> = before
            .iter()
            .filter(|(_, c)| **c == category)
            .map(|(k, _)| *k)
            .collect();
        let fixed = items
            .iter()
            .filter(|item| after.get(*item) == Some(&ErrorCategory::G))
            .count();
        rates.push(FixRate {
            category,
            fixed,
            total: items.len(),
        });
    }
    Ok(rates)
}

/// Category-by-category transition counts (G included); `matrix[a][b]` counts
/// items labeled `a` before and `b` after. Row sums equal per-category totals
/// at A and the grand total equals the item count.
pub fn transition_matrix(
    labels_before: &[ErrorLabel],
    labels_after: &[ErrorLabel],
) -> Result<BTreeMap<ErrorCategory, BTreeMap<ErrorCategory, usize>>, AnalysisError> {
    let before = label_map(labels_before);
    let after = label_map(labels_after);
    check_same_items(&before, &after)?;
    let mut matrix: BTreeMap<ErrorCategory, BTreeMap<ErrorCategory, usize>> = BTreeMap::new();
    for (item, &a) in &before {
        let b = after[item];
        *matrix.entry(a).or_default().entry(b).or_default() += 1;
    }
    Ok(matrix)
}

/// Renders a transition matrix as CSV with a fixed category order.
pub fn transition_matrix_csv(
    matrix: &BTreeMap<ErrorCategory, BTreeMap<ErrorCategory, usize>>,
) -> String {
    let mut out = String::from("from\\to");
    for to in ErrorCategory::ALL {
        out.push(',');
        out.push_str(to.as_str());
    }
    out.push('\n');
    for from in ErrorCategory::ALL {
        out.push_str(from.as_str());
        for to in ErrorCategory::ALL {
            let count = matrix
                .get(&from)
                .and_then(|row| row.get(&to))
                .copied()
                .unwrap_or(0);
            out.push(',');
            out.push_str(&count.to_string());
        }
        out.push('\n');
    }
    out
}

/// Output-length and executability statistics of one checkpoint's rollouts;
/// the reward-hacking monitor's raw numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputStats {
    pub checkpoint_tag: String,
    pub mean_sql_chars: f64,
    pub nonexecutable_pct: f64,
}

/// Mean extracted-SQL character count (a missing extraction counts as length
/// zero) and the percentage of NONEXECUTABLE rollouts.
pub fn output_stats(rollouts: &[Rollout]) -> Result<OutputStats, AnalysisError> {
    if rollouts.is_empty() {
        return Err(AnalysisError::EmptySet);
    }
    let total_chars: usize = rollouts
        .iter()
        .map(|r| r.extracted_sql.as_deref().map(|s| s.chars().count()).unwrap_or(0))
        .sum();
    let nonexecutable = rollouts
        .iter()
        .filter(|r| r.verdict == Some(Verdict::Nonexecutable))
        .count();
    Ok(OutputStats {
        checkpoint_tag: rollouts[0].checkpoint_tag.clone(),
        mean_sql_chars: total_chars as f64 / rollouts.len() as f64,
        nonexecutable_pct: 100.0 * nonexecutable as f64 / rollouts.len() as f64,
    })
}
