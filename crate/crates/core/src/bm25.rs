//! Okapi BM25 over small in-memory corpora.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum Bm25Error {
    #[error("unknown document id {0}")]
    UnknownDocument(usize),
}

/// Corpus statistics for BM25 scoring. Documents are addressed by their
/// position in the corpus passed to [`Bm25Stats::build`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Stats {
    pub k1: f64,
    pub b: f64,
    doc_freq: HashMap<String, usize>,
    term_freqs: Vec<HashMap<String, usize>>,
    doc_lengths: Vec<usize>,
    avg_doc_length: f64,
}

impl Bm25Stats {
    pub fn build<D, T>(docs: D, k1: f64, b: f64) -> Self
    where
        D: IntoIterator<Item = Vec<T>>,
        T: Into<String>,
    {
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut term_freqs = Vec::new();
        let mut doc_lengths = Vec::new();
        for doc in docs {
            let mut tf: HashMap<String, usize> = HashMap::new();
            let mut len = 0;
            for term in doc {
                *tf.entry(term.into()).or_default() += 1;
                len += 1;
            }
            for term in tf.keys() {
                *doc_freq.entry(term.clone()).or_default() += 1;
            }
            term_freqs.push(tf);
            doc_lengths.push(len);
        }
        let total: usize = doc_lengths.iter().sum();
        let avg_doc_length = if doc_lengths.is_empty() || total == 0 {
            // Every document is empty: any positive value keeps the length
            // normalization finite.
            1.0
        } else {
            total as f64 / doc_lengths.len() as f64
        };
        Self { k1, b, doc_freq, term_freqs, doc_lengths, avg_doc_length }
    }

    pub fn with_defaults<D, T>(docs: D) -> Self
    where
        D: IntoIterator<Item = Vec<T>>,
        T: Into<String>,
    {
        Self::build(docs, DEFAULT_K1, DEFAULT_B)
    }

    pub fn num_docs(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn doc_length(&self, doc_id: usize) -> Option<usize> {
        self.doc_lengths.get(doc_id).copied()
    }

    /// Non-negative inverse document frequency,
    /// `ln(1 + (N − df + 0.5) / (df + 0.5))`.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 score of document `doc_id` for `query_terms`.
    pub fn score<S: AsRef<str>>(&self, query_terms: &[S], doc_id: usize) -> Result<f64, Bm25Error> {
        let tf_map = self.term_freqs.get(doc_id).ok_or(Bm25Error::UnknownDocument(doc_id))?;
        let dl = self.doc_lengths[doc_id] as f64;
        let norm = self.k1 * (1.0 - self.b + self.b * dl / self.avg_doc_length);
        let mut score = 0.0;
        for term in query_terms {
            let tf = tf_map.get(term.as_ref()).copied().unwrap_or(0) as f64;
            if tf == 0.0 {
                continue;
            }
            score += self.idf(term.as_ref()) * tf * (self.k1 + 1.0) / (tf + norm);
        }
        Ok(score)
    }
}

/// Free-function form of [`Bm25Stats::score`].
pub fn bm25_score<S: AsRef<str>>(query_terms: &[S], doc_id: usize, stats: &Bm25Stats) -> Result<f64, Bm25Error> {
    stats.score(query_terms, doc_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Bm25Stats {
        Bm25Stats::with_defaults(vec![
            vec!["phone", "number"],
            vec!["school", "phone", "phone", "contact"],
            vec!["county", "name"],
        ])
    }

    #[test]
    fn absent_term_contributes_nothing() {
        assert_eq!(corpus().score(&["zebra"], 0).unwrap(), 0.0);
    }

    #[test]
    fn empty_query_scores_zero() {
        let q: [&str; 0] = [];
        assert_eq!(corpus().score(&q, 1).unwrap(), 0.0);
    }

    #[test]
    fn unknown_doc_is_an_error() {
        assert_eq!(corpus().score(&["phone"], 9), Err(Bm25Error::UnknownDocument(9)));
    }

    #[test]
    fn phone_matches_hand_evaluation() {
        // N = 3, df(phone) = 2, avgdl = 8/3.
        let idf = (1.0f64 + (3.0 - 2.0 + 0.5) / (2.0 + 0.5)).ln();
        let avg = 8.0 / 3.0;
        let doc0 = idf * 1.0 * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 2.0 / avg));
        let doc1 = idf * 2.0 * 2.2 / (2.0 + 1.2 * (0.25 + 0.75 * 4.0 / avg));
        let stats = corpus();
        assert!((stats.score(&["phone"], 0).unwrap() - doc0).abs() < 1e-12);
        assert!((stats.score(&["phone"], 1).unwrap() - doc1).abs() < 1e-12);
        assert_eq!(stats.score(&["phone"], 2).unwrap(), 0.0);
    }

    #[test]
    fn empty_corpus_is_well_defined() {
        let stats = Bm25Stats::with_defaults(Vec::<Vec<String>>::new());
        assert_eq!(stats.num_docs(), 0);
        assert!(stats.avg_doc_length() > 0.0);
    }
}
