//! Text normalization helpers shared by retrieval and evaluation.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

/// Shingle width used for MinHash and the lexical reranker.
pub const SHINGLE_WIDTH: usize = 3;

/// Lowercase character 3-gram shingles of `text`.
///
/// Strings shorter than the shingle width yield a single shingle holding the
/// whole (lowercased) string; the empty string yields no shingles.
pub fn shingles(text: &str) -> BTreeSet<String> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut out = BTreeSet::new();
    if chars.is_empty() {
        return out;
    }
    if chars.len() < SHINGLE_WIDTH {
        out.insert(chars.iter().collect());
        return out;
    }
    for window in chars.windows(SHINGLE_WIDTH) {
        out.insert(window.iter().collect());
    }
    out
}

/// Exact Jaccard similarity of two sets. Two empty sets are identical (1.0).
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Collapse runs of whitespace into single spaces and trim.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn numeric_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[+-]?(\d+\.?\d*|\.\d+)$").unwrap())
}

/// True when `keyword` is an optional sign, digits, and at most one decimal
/// point. Dates, hyphenated codes and anything with letters are "mixed".
pub fn is_purely_numeric(keyword: &str) -> bool {
    numeric_re().is_match(keyword.trim())
}

/// Canonical decimal rendering of a float: integral values print without a
/// fractional part, everything else uses the shortest round-trip form.
pub fn canonical_real(value: f64) -> String {
    if value.is_finite() && value.fract() == 0.0 && value.abs() < 1e15 {
        format!("{}", value as i64)
    } else {
        format!("{value}")
    }
}

/// Canonical form of a purely numeric keyword, if it parses.
pub fn canonical_numeric_keyword(keyword: &str) -> Option<String> {
    let trimmed = keyword.trim();
    if !is_purely_numeric(trimmed) {
        return None;
    }
    if let Ok(i) = trimmed.parse::<i64>() {
        return Some(i.to_string());
    }
    trimmed.parse::<f64>().ok().map(canonical_real)
}

/// Split an identifier or phrase into lowercase word terms: underscores,
/// punctuation and camelCase boundaries all separate terms.
pub fn identifier_terms(text: &str) -> Vec<String> {
    let mut terms = Vec::new();
    let mut current = String::new();
    let mut prev: Option<char> = None;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            let boundary = match prev {
                Some(p) => {
                    (p.is_lowercase() && ch.is_uppercase())
                        || (p.is_alphabetic() && ch.is_numeric())
                        || (p.is_numeric() && ch.is_alphabetic())
                }
                None => false,
            };
            if boundary && !current.is_empty() {
                terms.push(std::mem::take(&mut current));
            }
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            terms.push(std::mem::take(&mut current));
        }
        prev = Some(ch);
    }
    if !current.is_empty() {
        terms.push(current);
    }
    terms
}

fn metric_token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\w+|[^\w\s]").unwrap())
}

/// Tokenization used by BLEU and ROUGE: lowercase, punctuation characters
/// split into their own tokens, then whitespace split.
pub fn metric_tokens(text: &str) -> Vec<String> {
    metric_token_re().find_iter(&text.to_lowercase()).map(|m| m.as_str().to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shingles_of_short_and_empty_strings() {
        assert!(shingles("").is_empty());
        assert_eq!(shingles("Ab").into_iter().collect::<Vec<_>>(), vec!["ab"]);
        let s = shingles("Phone");
        assert_eq!(s.len(), 3);
        assert!(s.contains("pho") && s.contains("hon") && s.contains("one"));
    }

    #[test]
    fn numeric_lexer() {
        for k in ["500", "-3", "+2.5", "0.75", "10.", ".5"] {
            assert!(is_purely_numeric(k), "{k}");
        }
        for k in ["2000-01-01", "1.2.3", "12a", "", "-", "3/22/2009", "1,000"] {
            assert!(!is_purely_numeric(k), "{k}");
        }
    }

    #[test]
    fn canonical_numbers() {
        assert_eq!(canonical_real(500.0), "500");
        assert_eq!(canonical_real(2.5), "2.5");
        assert_eq!(canonical_numeric_keyword("+500").as_deref(), Some("500"));
        assert_eq!(canonical_numeric_keyword("500.0").as_deref(), Some("500"));
        assert_eq!(canonical_numeric_keyword("abc"), None);
    }

    #[test]
    fn identifier_splitting() {
        assert_eq!(identifier_terms("NumTstTakr"), vec!["num", "tst", "takr"]);
        assert_eq!(identifier_terms("Charter School (Y/N)"), vec!["charter", "school", "y", "n"]);
        assert_eq!(identifier_terms("AvgScrMath2"), vec!["avg", "scr", "math", "2"]);
    }

    #[test]
    fn metric_tokenization_splits_punctuation() {
        assert_eq!(metric_tokens("1. Find the Film's price"), vec!["1", ".", "find", "the", "film", "'", "s", "price"]);
    }

    #[test]
    fn jaccard_edge_cases() {
        let a = shingles("abcd");
        let b = shingles("abce");
        assert!((jaccard(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(jaccard::<String>(&BTreeSet::new(), &BTreeSet::new()), 1.0);
    }
}
