//! Text and keyword metrics: BLEU, ROUGE and keyword precision/recall/F1.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{metric_tokens, normalize_whitespace};
use crate::uqu::KeywordSet;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("reference text is empty")]
    EmptyReference,
    #[error("BLEU order must be between 1 and 4, got {0}")]
    BadOrder(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(overlap: usize, predicted: usize, gold: usize) -> Self {
        if predicted == 0 && gold == 0 {
            return Self { precision: 1.0, recall: 1.0, f1: 1.0 };
        }
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(overlap, predicted);
        let recall = ratio(overlap, gold);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, f1 }
    }
}

/// Scored items of a keyword set: lowercased objects plus `key: value`
/// strings for the implementation map (just `key` when the value is empty).
pub fn keyword_items(keywords: &KeywordSet) -> BTreeSet<String> {
    let norm = |s: &str| normalize_whitespace(s).to_lowercase();
    keywords
        .objects
        .iter()
        .map(|o| norm(o))
        .chain(keywords.implementations.iter().map(|(k, v)| {
            let (k, v) = (norm(k), norm(v));
            if v.is_empty() {
                k
            } else {
                format!("{k}: {v}")
            }
        }))
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn keyword_f1(pred: &KeywordSet, gold: &KeywordSet) -> Prf {
    let p = keyword_items(pred);
    let g = keyword_items(gold);
    Prf::from_counts(p.intersection(&g).count(), p.len(), g.len())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_overlap(cand: &HashMap<&[String], usize>, reference: &HashMap<&[String], usize>) -> usize {
    cand.iter().map(|(g, c)| (*c).min(reference.get(g).copied().unwrap_or(0))).sum()
}

fn tokens_checked(candidate: &str, reference: &str) -> Result<(Vec<String>, Vec<String>), MetricError> {
    let r = metric_tokens(reference);
    if r.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok((metric_tokens(candidate), r))
}

/// Sentence BLEU with uniform weights up to `max_n`, brevity penalty and no
/// smoothing. Tokens are lowercased words and punctuation marks.
///
/// When neither text has any n-gram of some order, that order's precision
/// is 1 if the token sequences are identical and 0 otherwise.
pub fn bleu(candidate: &str, reference: &str, max_n: usize) -> Result<f64, MetricError> {
    if !(1..=4).contains(&max_n) {
        return Err(MetricError::BadOrder(max_n));
    }
    let (c, r) = tokens_checked(candidate, reference)?;
    if c.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cc = ngram_counts(&c, n);
        let total: usize = cc.values().sum();
        let p = if total == 0 {
            if r.len() < n && c == r {
                1.0
            } else {
                0.0
            }
        } else {
            clipped_overlap(&cc, &ngram_counts(&r, n)) as f64 / total as f64
        };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln() / max_n as f64;
    }
    let (cl, rl) = (c.len() as f64, r.len() as f64);
    let bp = if cl > rl { 1.0 } else { (1.0 - rl / cl).exp() };
    Ok(bp * log_sum.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScores {
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
}

fn f_measure(overlap: usize, cand: usize, reference: usize) -> f64 {
    if cand == 0 || reference == 0 || overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand as f64;
    let r = overlap as f64 / reference as f64;
    2.0 * p * r / (p + r)
}

fn rouge_n(c: &[String], r: &[String], n: usize) -> f64 {
    let cc = ngram_counts(c, n);
    let rc = ngram_counts(r, n);
    let (ct, rt): (usize, usize) = (cc.values().sum(), rc.values().sum());
    if ct == 0 && rt == 0 {
        return if c == r { 1.0 } else { 0.0 };
    }
    f_measure(clipped_overlap(&cc, &rc), ct, rt)
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-1, ROUGE-2 and ROUGE-L F-measures (balanced precision and recall).
pub fn rouge(candidate: &str, reference: &str) -> Result<RougeScores, MetricError> {
    let (c, r) = tokens_checked(candidate, reference)?;
    Ok(RougeScores {
        rouge1: rouge_n(&c, &r, 1),
        rouge2: rouge_n(&c, &r, 2),
        rouge_l: f_measure(lcs_len(&c, &r), c.len(), r.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use indexmap::IndexMap;

    fn ks(objects: &[&str]) -> KeywordSet {
        KeywordSet::normalized(objects.iter().copied(), IndexMap::new())
    }

    #[test]
    fn f1_rows() {
        let p = keyword_f1(&ks(&["title", "keywords"]), &ks(&["title", "keywords", "episode"]));
        assert_eq!(p.precision, 1.0);
        assert!((p.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.f1 - 0.8).abs() < 1e-12);
        let z = keyword_f1(&ks(&["statement"]), &ks(&["need statement"]));
        assert_eq!((z.precision, z.recall, z.f1), (0.0, 0.0, 0.0));
        let e = keyword_f1(&ks(&[]), &ks(&[]));
        assert_eq!((e.precision, e.recall, e.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn implementation_pairs_are_scored() {
        let mut m = IndexMap::new();
        m.insert("opened after".to_string(), "2000/1/1".to_string());
        let a = KeywordSet::normalized(["school"], m.clone());
        assert!(keyword_items(&a).contains("opened after: 2000/1/1"));
        let mut other = m;
        other.insert("opened after".into(), "1999".into());
        let b = KeywordSet::normalized(["School"], other.clone());
        let s = keyword_f1(&b, &a);
        assert_eq!((s.precision, s.recall), (0.5, 0.5));
    }

    #[test]
    fn bleu_and_rouge_edges() {
        assert_eq!(bleu("the cat sat", "the cat sat", 2).unwrap(), 1.0);
        assert_eq!(bleu("dog", "the cat sat", 1).unwrap(), 0.0);
        assert_eq!(bleu("yes", "yes", 2).unwrap(), 1.0);
        assert_eq!(bleu("", "x", 1).unwrap(), 0.0);
        assert_eq!(bleu("x", "  ", 1), Err(MetricError::EmptyReference));
        let r = rouge("a b c", "a b c").unwrap();
        assert_eq!((r.rouge1, r.rouge2, r.rouge_l), (1.0, 1.0, 1.0));
        let r = rouge("x y", "a b").unwrap();
        assert_eq!((r.rouge1, r.rouge2, r.rouge_l), (0.0, 0.0, 0.0));
    }

    #[test]
    fn lcs_small() {
        assert_eq!(lcs_len(b"ABCBDAB", b"BDCABA"), 4);
        assert_eq!(lcs_len::<u8>(b"", b"abc"), 0);
    }
}
