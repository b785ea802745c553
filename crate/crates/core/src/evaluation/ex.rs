//! Execution accuracy: run predicted and gold SQL, compare result multisets.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::exec::{execute_sql, ExecutionOutcome, ExecutionStatus, Row, SqlValue};

/// Absolute tolerance for values near zero; relative above magnitude 1.
pub const FLOAT_TOLERANCE: f64 = 1e-6;

/// Rows beyond which tolerant matching falls back to sorted comparison.
const MATCHING_LIMIT: usize = 20_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompareMode {
    /// Duplicated rows must appear equally often.
    #[default]
    Multiset,
    /// Duplicates are ignored.
    Set,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum ExVerdict {
    Match,
    Mismatch,
    /// The prediction did not execute; counts as a mismatch.
    PredFailed {
        message: String,
    },
    /// The gold query did not execute; the item is excluded from EX.
    InvalidGold {
        message: String,
    },
}

impl ExVerdict {
    /// `Some(correct)` for valid items, `None` for invalid gold.
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ExVerdict::Match => Some(true),
            ExVerdict::Mismatch | ExVerdict::PredFailed { .. } => Some(false),
            ExVerdict::InvalidGold { .. } => None,
        }
    }
}

pub fn values_equal(a: &SqlValue, b: &SqlValue) -> bool {
    match (a, b) {
        (SqlValue::Null, SqlValue::Null) => true,
        (SqlValue::Null, _) | (_, SqlValue::Null) => false,
        (SqlValue::Integer(x), SqlValue::Integer(y)) => x == y,
        (SqlValue::Text(x), SqlValue::Text(y)) => x == y,
        (SqlValue::Blob { blob: x }, SqlValue::Blob { blob: y }) => x == y,
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => floats_close(x, y),
            _ => false,
        },
    }
}

pub fn floats_close(x: f64, y: f64) -> bool {
    if x == y {
        return true;
    }
    let scale = 1f64.max(x.abs()).max(y.abs());
    (x - y).abs() <= FLOAT_TOLERANCE * scale
}

fn rows_equal(a: &Row, b: &Row) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| values_equal(x, y))
}

fn rank(v: &SqlValue) -> u8 {
    match v {
        SqlValue::Null => 0,
        SqlValue::Integer(_) | SqlValue::Real(_) => 1,
        SqlValue::Text(_) => 2,
        SqlValue::Blob { .. } => 3,
    }
}

fn value_order(a: &SqlValue, b: &SqlValue) -> Ordering {
    rank(a).cmp(&rank(b)).then_with(|| match (a, b) {
        (SqlValue::Text(x), SqlValue::Text(y)) => x.cmp(y),
        (SqlValue::Blob { blob: x }, SqlValue::Blob { blob: y }) => x.cmp(y),
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            _ => Ordering::Equal,
        },
    })
}

fn row_order(a: &Row, b: &Row) -> Ordering {
    a.iter().zip(b).map(|(x, y)| value_order(x, y)).find(|o| o.is_ne()).unwrap_or_else(|| a.len().cmp(&b.len()))
}

fn has_real(rows: &[Row]) -> bool {
    rows.iter().flatten().any(|v| matches!(v, SqlValue::Real(_)))
}

fn dedup(rows: &[Row]) -> Vec<Row> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(row_order);
    sorted.dedup_by(|a, b| rows_equal(a, b));
    sorted
}

/// Maximum bipartite matching between rows under tolerant equality
/// (augmenting paths); true iff every row finds a partner.
fn perfect_matching(a: &[Row], b: &[Row]) -> bool {
    let n = a.len();
    let adj: Vec<Vec<usize>> = a.iter().map(|ra| (0..n).filter(|&j| rows_equal(ra, &b[j])).collect()).collect();
    if adj.iter().any(Vec::is_empty) {
        return false;
    }
    let mut owner: Vec<Option<usize>> = vec![None; n];
    fn augment(i: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|k| augment(k, adj, owner, seen)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    for i in 0..n {
        let mut seen = vec![false; n];
        if !augment(i, &adj, &mut owner, &mut seen) {
            return false;
        }
    }
    true
}

/// Compare two result sets. `ordered` compares rows position by position;
/// otherwise rows are compared as multisets (or sets). Values compare with
/// [`values_equal`]; rows of different widths never match.
pub fn compare_results(pred: &[Row], gold: &[Row], ordered: bool, mode: CompareMode) -> bool {
    let width = |rows: &[Row]| rows.first().map(Vec::len);
    if let (Some(p), Some(g)) = (width(pred), width(gold)) {
        if p != g {
            return false;
        }
    }
    let (pred, gold) = match mode {
        CompareMode::Multiset => (pred.to_vec(), gold.to_vec()),
        CompareMode::Set if ordered => {
            let keep_first = |rows: &[Row]| {
                let mut out: Vec<Row> = Vec::new();
                for r in rows {
                    if !out.iter().any(|o| rows_equal(o, r)) {
                        out.push(r.clone());
                    }
                }
                out
            };
            (keep_first(pred), keep_first(gold))
        }
        CompareMode::Set => (dedup(pred), dedup(gold)),
    };
    if pred.len() != gold.len() {
        return false;
    }
    if ordered {
        return pred.iter().zip(&gold).all(|(a, b)| rows_equal(a, b));
    }
    let mut p = pred.clone();
    let mut g = gold.clone();
    p.sort_by(row_order);
    g.sort_by(row_order);
    if p.iter().zip(&g).all(|(a, b)| rows_equal(a, b)) {
        return true;
    }
    if !(has_real(&p) || has_real(&g)) || p.len() > MATCHING_LIMIT {
        return false;
    }
    perfect_matching(&p, &g)
}

/// Blank out string literals, quoted identifiers and comments so keyword
/// scanning only sees SQL structure.
fn mask_sql(sql: &str) -> String {
    let chars: Vec<char> = sql.chars().collect();
    let mut out = String::with_capacity(sql.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let close = match c {
            '\'' | '"' | '`' => Some(c),
            '[' => Some(']'),
            _ => None,
        };
        if let Some(close) = close {
            out.push(' ');
            i += 1;
            while i < chars.len() {
                if chars[i] == close {
                    if close != ']' && chars.get(i + 1) == Some(&close) {
                        i += 2;
                        continue;
                    }
                    break;
                }
                i += 1;
            }
            out.push(' ');
            i += 1;
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            out.push(' ');
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            while i + 1 < chars.len() && !(chars[i] == '*' && chars[i + 1] == '/') {
                i += 1;
            }
            i += 2;
            out.push(' ');
            continue;
        }
        out.push(c);
        i += 1;
    }
    out
}

/// Whether `sql` has an `ORDER BY` outside any parentheses.
pub fn has_top_level_order_by(sql: &str) -> bool {
    let masked = mask_sql(sql).to_ascii_uppercase();
    let mut depth: i32 = 0;
    let mut top = String::with_capacity(masked.len());
    for c in masked.chars() {
        match c {
            '(' => {
                depth += 1;
                top.push(' ');
            }
            ')' => {
                depth -= 1;
                top.push(' ');
            }
            _ if depth == 0 => top.push(c),
            _ => top.push(' '),
        }
    }
    let words: Vec<&str> =
        top.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).filter(|w| !w.is_empty()).collect();
    words.windows(2).any(|w| w == ["ORDER", "BY"])
}

/// EX verdict for already-executed outcomes.
pub fn judge_outcomes(
    pred: &ExecutionOutcome,
    gold: &ExecutionOutcome,
    gold_sql: &str,
    mode: CompareMode,
) -> ExVerdict {
    let gold_rows = match &gold.status {
        ExecutionStatus::Ok { rows } => rows,
        ExecutionStatus::SqlError { message } => return ExVerdict::InvalidGold { message: message.clone() },
        ExecutionStatus::Timeout => return ExVerdict::InvalidGold { message: "gold query timed out".into() },
    };
    let pred_rows = match &pred.status {
        ExecutionStatus::Ok { rows } => rows,
        ExecutionStatus::SqlError { message } => return ExVerdict::PredFailed { message: message.clone() },
        ExecutionStatus::Timeout => return ExVerdict::PredFailed { message: "predicted query timed out".into() },
    };
    if compare_results(pred_rows, gold_rows, has_top_level_order_by(gold_sql), mode) {
        ExVerdict::Match
    } else {
        ExVerdict::Mismatch
    }
}

/// Execute both queries and compare their results.
pub fn execution_verdict(
    pred_sql: &str,
    gold_sql: &str,
    db_path: &Path,
    timeout_secs: f64,
    mode: CompareMode,
) -> ExVerdict {
    let gold = execute_sql(db_path, gold_sql, timeout_secs);
    if !gold.is_ok() {
        return judge_outcomes(&gold, &gold, gold_sql, mode);
    }
    let pred = execute_sql(db_path, pred_sql, timeout_secs);
    judge_outcomes(&pred, &gold, gold_sql, mode)
}

/// `Ok(correct)`, or `Err(message)` when the gold query does not execute.
pub fn execution_accuracy(pred_sql: &str, gold_sql: &str, db_path: &Path, timeout_secs: f64) -> Result<bool, String> {
    match execution_verdict(pred_sql, gold_sql, db_path, timeout_secs, CompareMode::Multiset) {
        ExVerdict::InvalidGold { message } => Err(message),
        v => Ok(v == ExVerdict::Match),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use SqlValue::*;

    fn t(s: &str) -> SqlValue {
        Text(s.into())
    }

    #[test]
    fn order_by_detection() {
        assert!(has_top_level_order_by("SELECT a FROM t ORDER BY a"));
        assert!(has_top_level_order_by("select a from t order\n by a desc limit 1"));
        assert!(!has_top_level_order_by("SELECT a FROM (SELECT a FROM t ORDER BY a)"));
        assert!(!has_top_level_order_by("SELECT 'ORDER BY' FROM t"));
        assert!(!has_top_level_order_by("SELECT \"order by\" FROM t -- ORDER BY a"));
    }

    #[test]
    fn multiset_vs_set() {
        let a = vec![vec![Integer(1)], vec![Integer(1)]];
        let b = vec![vec![Integer(1)]];
        assert!(!compare_results(&a, &b, false, CompareMode::Multiset));
        assert!(compare_results(&a, &b, false, CompareMode::Set));
    }

    #[test]
    fn nulls_and_floats() {
        assert!(values_equal(&Null, &Null));
        assert!(!values_equal(&Null, &Integer(0)));
        assert!(!values_equal(&Null, &t("")));
        assert!(values_equal(&Real(0.1 + 0.2), &Real(0.3)));
        assert!(values_equal(&Integer(2), &Real(2.0000000001)));
        assert!(!values_equal(&Real(1.0), &Real(1.00001)));
        assert!(!values_equal(&t("1"), &Integer(1)));
    }

    #[test]
    fn tolerant_matching_beyond_sorting() {
        // Sorting puts the near-equal reals in different places.
        let p = vec![vec![Real(1.0000001), t("b")], vec![Real(1.0), t("a")]];
        let g = vec![vec![Real(1.0), t("b")], vec![Real(1.0000001), t("a")]];
        assert!(compare_results(&p, &g, false, CompareMode::Multiset));
    }

    #[test]
    fn width_mismatch_is_false() {
        let p = vec![vec![Integer(1), Integer(2)]];
        let g = vec![vec![Integer(1)]];
        assert!(!compare_results(&p, &g, false, CompareMode::Multiset));
        assert!(compare_results(&[], &[], true, CompareMode::Multiset));
    }
}
