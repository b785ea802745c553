//! Entity retrieval: keywords → columns, table values and descriptions.
//!
//! Retrieval runs per keyword in two stages. A first-stage scorer (MinHash
//! or BM25) proposes up to `top_k_first` candidates; a re-ranker keeps the
//! best `top_k_final`. Column candidates must score above zero. A purely
//! numeric keyword only matches table values that are exactly equal to it;
//! any other keyword takes the top candidates with no score threshold.
//! Descriptions are matched by embedding cosine similarity.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bm25::Bm25Stats;
use crate::catalog::{DatabaseCatalog, DescriptionEntry};
use crate::llm::{Embedder, LlmError, Reranker};
use crate::minhash::{minhash_estimate, MinHashIndex};
use crate::text::{canonical_numeric_keyword, identifier_terms, is_purely_numeric, shingles};

pub const DEFAULT_TOP_K_FIRST: usize = 5;
pub const DEFAULT_TOP_K_FINAL: usize = 2;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("candidate {0} does not resolve against the catalog")]
    Dangling(String),
    #[error("embedding failed: {0}")]
    Embedding(LlmError),
    #[error("embedder returned {got} vectors for {expected} texts")]
    EmbeddingCount { expected: usize, got: usize },
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding cache {path}: {message}")]
    Cache { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateKind {
    ColumnName,
    TableValue,
    Description,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalCandidate {
    pub kind: CandidateKind,
    pub table: String,
    pub column: String,
    /// Matched text: the column name, the table value, or the description.
    pub payload: String,
    /// First-stage score.
    pub score: f64,
    /// Second-stage score, when a re-ranker produced one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_score: Option<f64>,
}

impl RetrievalCandidate {
    pub fn new(
        kind: CandidateKind,
        table: impl Into<String>,
        column: impl Into<String>,
        payload: impl Into<String>,
        score: f64,
    ) -> Self {
        Self { kind, table: table.into(), column: column.into(), payload: payload.into(), score, rerank_score: None }
    }

    fn lexical_key(&self) -> (&str, &str, &str) {
        (&self.table, &self.column, &self.payload)
    }
}

/// First-stage scorer. Implementations score every column name and every
/// indexed value; selection rules live in [`retrieve_columns`] and
/// [`retrieve_values`], so scorers are interchangeable.
pub trait EntityScorer: Send + Sync {
    fn name(&self) -> &'static str;
    /// `(table, column, score)` for every column.
    fn column_scores(&self, keyword: &str) -> Vec<(String, String, f64)>;
    /// `(table, column, value, score)` for every indexed value.
    fn value_scores(&self, keyword: &str) -> Vec<(String, String, String, f64)>;
}

impl EntityScorer for MinHashIndex {
    fn name(&self) -> &'static str {
        "minhash"
    }

    fn column_scores(&self, keyword: &str) -> Vec<(String, String, f64)> {
        let sig = self.hasher().signature(keyword);
        self.columns
            .iter()
            .map(|c| {
                let s = minhash_estimate(&sig, &c.signature).unwrap_or(0.0);
                (c.table.clone(), c.column.clone(), s)
            })
            .collect()
    }

    fn value_scores(&self, keyword: &str) -> Vec<(String, String, String, f64)> {
        let sig = self.hasher().signature(keyword);
        self.entries
            .iter()
            .map(|e| {
                let s = minhash_estimate(&sig, &e.signature).unwrap_or(0.0);
                (e.table.clone(), e.column.clone(), e.value.clone(), s)
            })
            .collect()
    }
}

/// BM25 statistics over column names and over table values, each tokenized
/// into lowercase word terms (camelCase and underscores split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    columns: Vec<(String, String)>,
    column_stats: Bm25Stats,
    values: Vec<(String, String, String)>,
    value_stats: Bm25Stats,
}

impl Bm25Index {
    pub fn build(catalog: &DatabaseCatalog, k1: f64, b: f64) -> Self {
        let columns: Vec<(String, String)> =
            catalog.column_refs().map(|(t, c)| (t.name.clone(), c.name.clone())).collect();
        let column_stats = Bm25Stats::build(columns.iter().map(|(_, c)| identifier_terms(c)), k1, b);
        let values: Vec<(String, String, String)> = catalog
            .column_refs()
            .flat_map(|(t, c)| c.sample_values.iter().map(move |v| (t.name.clone(), c.name.clone(), v.clone())))
            .collect();
        let value_stats = Bm25Stats::build(values.iter().map(|(_, _, v)| identifier_terms(v)), k1, b);
        Self { columns, column_stats, values, value_stats }
    }
}

impl EntityScorer for Bm25Index {
    fn name(&self) -> &'static str {
        "bm25"
    }

    fn column_scores(&self, keyword: &str) -> Vec<(String, String, f64)> {
        let q = identifier_terms(keyword);
        self.columns
            .iter()
            .enumerate()
            .map(|(i, (t, c))| (t.clone(), c.clone(), self.column_stats.score(&q, i).unwrap_or(0.0)))
            .collect()
    }

    fn value_scores(&self, keyword: &str) -> Vec<(String, String, String, f64)> {
        let q = identifier_terms(keyword);
        self.values
            .iter()
            .enumerate()
            .map(|(i, (t, c, v))| (t.clone(), c.clone(), v.clone(), self.value_stats.score(&q, i).unwrap_or(0.0)))
            .collect()
    }
}

fn by_score_then_lexical(a: &RetrievalCandidate, b: &RetrievalCandidate) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.lexical_key().cmp(&b.lexical_key()))
}

/// Up to `top_k` column candidates with strictly positive scores, best
/// first, ties broken by `(table, column)`.
pub fn retrieve_columns(
    keyword: &str,
    catalog: &DatabaseCatalog,
    scorer: &dyn EntityScorer,
    top_k: usize,
) -> Vec<RetrievalCandidate> {
    let mut out: Vec<RetrievalCandidate> = scorer
        .column_scores(keyword)
        .into_iter()
        .filter(|(t, c, s)| s.is_finite() && *s > 0.0 && catalog.column(t, c).is_some())
        .map(|(t, c, s)| RetrievalCandidate::new(CandidateKind::ColumnName, t, c.clone(), c, s))
        .collect();
    out.sort_by(by_score_then_lexical);
    out.truncate(top_k);
    out
}

/// Up to `top_k` table-value candidates.
///
/// Purely numeric keywords return only values whose canonical string equals
/// the keyword (score 1). Other keywords return the best `top_k` by
/// similarity with no score threshold.
pub fn retrieve_values(
    keyword: &str,
    scorer: &dyn EntityScorer,
    catalog: &DatabaseCatalog,
    top_k: usize,
) -> Vec<RetrievalCandidate> {
    let mut out: Vec<RetrievalCandidate> = if is_purely_numeric(keyword) {
        let literal = keyword.trim();
        let canonical = canonical_numeric_keyword(literal);
        catalog
            .column_refs()
            .flat_map(|(t, c)| {
                c.sample_values
                    .iter()
                    .filter(|v| v.as_str() == literal || Some(v.as_str()) == canonical.as_deref())
                    .map(move |v| RetrievalCandidate::new(CandidateKind::TableValue, &t.name, &c.name, v, 1.0))
            })
            .collect()
    } else {
        scorer
            .value_scores(keyword)
            .into_iter()
            .filter(|(_, _, _, s)| s.is_finite())
            .map(|(t, c, v, s)| RetrievalCandidate::new(CandidateKind::TableValue, t, c, v, s))
            .collect()
    };
    out.sort_by(by_score_then_lexical);
    out.truncate(top_k);
    out
}

/// Deterministic lexical re-ranker: equal-weight blend of normalized edit
/// similarity and 3-gram shingle Jaccard, both case-insensitive.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalReranker;

impl LexicalReranker {
    pub fn similarity(query: &str, passage: &str) -> f64 {
        let q = query.to_lowercase();
        let p = passage.to_lowercase();
        let edit = strsim::normalized_levenshtein(&q, &p);
        let jac = crate::text::jaccard(&shingles(&q), &shingles(&p));
        0.5 * edit + 0.5 * jac
    }
}

impl Reranker for LexicalReranker {
    fn score(&self, query: &str, passages: &[String]) -> Result<Vec<f64>, LlmError> {
        Ok(passages.iter().map(|p| Self::similarity(query, p)).collect())
    }
}

/// Keep the `top_k` best candidates according to `reranker`. Ties fall back
/// to the first-stage score, then to `(table, column, payload)`. If the
/// re-ranker fails or returns unusable scores, first-stage order is used.
pub fn rerank(
    keyword: &str,
    candidates: &[RetrievalCandidate],
    reranker: &dyn Reranker,
    top_k: usize,
) -> Vec<RetrievalCandidate> {
    let mut out: Vec<RetrievalCandidate> = candidates.to_vec();
    if out.is_empty() {
        return out;
    }
    let passages: Vec<String> = out.iter().map(|c| c.payload.clone()).collect();
    match reranker.score(keyword, &passages) {
        Ok(scores) if scores.len() == out.len() && scores.iter().all(|s| s.is_finite()) => {
            for (c, s) in out.iter_mut().zip(scores) {
                c.rerank_score = Some(s);
            }
            out.sort_by(|a, b| {
                b.rerank_score
                    .unwrap_or(f64::NEG_INFINITY)
                    .total_cmp(&a.rerank_score.unwrap_or(f64::NEG_INFINITY))
                    .then_with(|| by_score_then_lexical(a, b))
            });
        }
        Ok(scores) => {
            log::warn!(
                "re-ranker returned {} usable scores for {} candidates; keeping first-stage order",
                scores.len(),
                out.len()
            );
            out.sort_by(by_score_then_lexical);
        }
        Err(e) => {
            log::warn!("re-ranker failed ({e}); keeping first-stage order");
            out.sort_by(by_score_then_lexical);
        }
    }
    out.truncate(top_k);
    out
}

/// Deterministic feature-hashing embedder over word terms and character
/// 3-grams. Needs no service; identical texts map to identical unit vectors.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    model_id: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1), model_id: format!("hashing-{dim}") }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        let features = identifier_terms(text)
            .into_iter()
            .map(|t| format!("w:{t}"))
            .chain(shingles(text).into_iter().map(|s| format!("s:{s}")));
        for f in features {
            let digest = Sha256::digest(f.as_bytes());
            let h = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
            let idx = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

impl Embedder for HashingEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Persistent embedding cache keyed by `(model id, text hash)`.
///
/// Writers need `&mut`, which serializes updates; readers may share it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCache {
    vectors: HashMap<String, Vec<f32>>,
}

impl EmbeddingCache {
    pub fn key(model_id: &str, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(model_id.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn get(&self, model_id: &str, text: &str) -> Option<&Vec<f32>> {
        self.vectors.get(&Self::key(model_id, text))
    }

    pub fn insert(&mut self, model_id: &str, text: &str, vector: Vec<f32>) {
        self.vectors.insert(Self::key(model_id, text), vector);
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let bytes = std::fs::read(path)
            .map_err(|e| RetrievalError::Cache { path: path.display().to_string(), message: e.to_string() })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| RetrievalError::Cache { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let err = |e: &dyn std::fmt::Display| RetrievalError::Cache {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| err(&e))?;
        }
        // Sorted keys keep the file byte-stable.
        let sorted: std::collections::BTreeMap<_, _> = self.vectors.iter().collect();
        let json = serde_json::to_vec(&sorted).map_err(|e| err(&e))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, json).map_err(|e| err(&e))?;
        std::fs::rename(&tmp, path).map_err(|e| err(&e))
    }
}

/// Embedded description entries of one catalog: a flat table scanned
/// exhaustively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionStore {
    pub model_id: String,
    pub entries: Vec<DescriptionEntry>,
    pub vectors: Vec<Vec<f32>>,
}

impl DescriptionStore {
    /// Embed every description, serving cached vectors first and sending only
    /// misses to the embedder.
    pub fn build(
        catalog: &DatabaseCatalog,
        embedder: &dyn Embedder,
        cache: &mut EmbeddingCache,
    ) -> Result<Self, RetrievalError> {
        let model_id = embedder.model_id().to_string();
        let entries = catalog.descriptions.clone();
        let texts: Vec<String> = entries.iter().map(DescriptionEntry::text).collect();
        let missing: Vec<String> = {
            let mut seen = HashSet::new();
            texts.iter().filter(|t| cache.get(&model_id, t).is_none() && seen.insert((*t).clone())).cloned().collect()
        };
        if !missing.is_empty() {
            let vectors = embedder.embed(&missing).map_err(RetrievalError::Embedding)?;
            if vectors.len() != missing.len() {
                return Err(RetrievalError::EmbeddingCount { expected: missing.len(), got: vectors.len() });
            }
            for (t, v) in missing.iter().zip(vectors) {
                cache.insert(&model_id, t, v);
            }
        }
        let vectors: Vec<Vec<f32>> =
            texts.iter().map(|t| cache.get(&model_id, t).cloned().unwrap_or_default()).collect();
        if let Some(first) = vectors.first() {
            if let Some(bad) = vectors.iter().find(|v| v.len() != first.len()) {
                return Err(RetrievalError::DimensionMismatch(first.len(), bad.len()));
            }
        }
        Ok(Self { model_id, entries, vectors })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Top `top_k` descriptions by cosine similarity to `keyword`, ties broken
    /// by `(table, column)`.
    pub fn nearest(
        &self,
        keyword: &str,
        embedder: &dyn Embedder,
        top_k: usize,
    ) -> Result<Vec<RetrievalCandidate>, RetrievalError> {
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        let query = embedder
            .embed(&[keyword.to_string()])
            .map_err(RetrievalError::Embedding)?
            .into_iter()
            .next()
            .ok_or(RetrievalError::EmbeddingCount { expected: 1, got: 0 })?;
        if let Some(v) = self.vectors.first() {
            if v.len() != query.len() {
                return Err(RetrievalError::DimensionMismatch(v.len(), query.len()));
            }
        }
        let mut out: Vec<RetrievalCandidate> = self
            .entries
            .iter()
            .zip(&self.vectors)
            .map(|(e, v)| {
                RetrievalCandidate::new(
                    CandidateKind::Description,
                    &e.table,
                    &e.column,
                    e.text(),
                    cosine_similarity(&query, v),
                )
            })
            .collect();
        out.sort_by(by_score_then_lexical);
        out.truncate(top_k);
        Ok(out)
    }
}

/// Description retrieval: cosine top-`top_k_first`, then re-ranked to
/// `top_k_final`.
pub fn retrieve_descriptions(
    keyword: &str,
    embedder: &dyn Embedder,
    store: &DescriptionStore,
    reranker: &dyn Reranker,
    top_k_first: usize,
    top_k_final: usize,
) -> Result<Vec<DescriptionEntry>, RetrievalError> {
    let first = store.nearest(keyword, embedder, top_k_first)?;
    let kept = rerank(keyword, &first, reranker, top_k_final);
    Ok(kept
        .iter()
        .filter_map(|c| store.entries.iter().find(|e| e.table == c.table && e.column == c.column).cloned())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ValueRef {
    pub table: String,
    pub column: String,
    pub value: String,
}

/// Deduplicated, categorized retrieval results for one question.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievedEntities {
    pub columns: Vec<ColumnRef>,
    pub values: Vec<ValueRef>,
    pub descriptions: Vec<DescriptionEntry>,
}

impl RetrievedEntities {
    pub fn is_empty(&self) -> bool {
        self.columns.is_empty() && self.values.is_empty() && self.descriptions.is_empty()
    }

    /// Check that every entry resolves against `catalog`.
    pub fn check_against(&self, catalog: &DatabaseCatalog) -> Result<(), RetrievalError> {
        for c in &self.columns {
            if catalog.column(&c.table, &c.column).is_none() {
                return Err(RetrievalError::Dangling(format!("{}.{}", c.table, c.column)));
            }
        }
        for v in &self.values {
            let ok = catalog.column(&v.table, &v.column).is_some_and(|c| c.sample_values.contains(&v.value));
            if !ok {
                return Err(RetrievalError::Dangling(format!("{}.{} = {:?}", v.table, v.column, v.value)));
            }
        }
        for d in &self.descriptions {
            if catalog.description(&d.table, &d.column).is_none() {
                return Err(RetrievalError::Dangling(format!("description of {}.{}", d.table, d.column)));
            }
        }
        Ok(())
    }
}

/// Merge per-keyword candidate lists: value hits contribute their
/// `(table, column)` to the column list; everything is deduplicated in
/// first-seen order.
pub fn assemble_entities(
    per_keyword: &[Vec<RetrievalCandidate>],
    catalog: &DatabaseCatalog,
) -> Result<RetrievedEntities, RetrievalError> {
    let mut out = RetrievedEntities::default();
    let mut seen_columns = HashSet::new();
    let mut seen_values = HashSet::new();
    let mut seen_descriptions = HashSet::new();
    for c in per_keyword.iter().flatten() {
        let column_ref = ColumnRef { table: c.table.clone(), column: c.column.clone() };
        match c.kind {
            CandidateKind::ColumnName | CandidateKind::TableValue => {
                let column = catalog
                    .column(&c.table, &c.column)
                    .ok_or_else(|| RetrievalError::Dangling(format!("{}.{}", c.table, c.column)))?;
                if c.kind == CandidateKind::TableValue {
                    if !column.sample_values.contains(&c.payload) {
                        return Err(RetrievalError::Dangling(format!("{}.{} = {:?}", c.table, c.column, c.payload)));
                    }
                    let v = ValueRef { table: c.table.clone(), column: c.column.clone(), value: c.payload.clone() };
                    if seen_values.insert(v.clone()) {
                        out.values.push(v);
                    }
                }
                if seen_columns.insert(column_ref.clone()) {
                    out.columns.push(column_ref);
                }
            }
            CandidateKind::Description => {
                let entry = catalog
                    .description(&c.table, &c.column)
                    .ok_or_else(|| RetrievalError::Dangling(format!("description of {}.{}", c.table, c.column)))?;
                if seen_descriptions.insert(column_ref) {
                    out.descriptions.push(entry.clone());
                }
            }
        }
    }
    Ok(out)
}

/// Retrieval limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalLimits {
    pub top_k_first: usize,
    pub top_k_final: usize,
}

impl Default for RetrievalLimits {
    fn default() -> Self {
        Self { top_k_first: DEFAULT_TOP_K_FIRST, top_k_final: DEFAULT_TOP_K_FINAL }
    }
}

/// Per-keyword audit record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordHits {
    pub keyword: String,
    pub columns: Vec<RetrievalCandidate>,
    pub values: Vec<RetrievalCandidate>,
    pub descriptions: Vec<RetrievalCandidate>,
}

/// Everything needed to run entity retrieval against one catalog.
pub struct EntityRetriever<'a> {
    pub catalog: &'a DatabaseCatalog,
    pub scorer: &'a dyn EntityScorer,
    pub reranker: &'a dyn Reranker,
    pub embedder: &'a dyn Embedder,
    pub descriptions: &'a DescriptionStore,
    pub limits: RetrievalLimits,
}

impl EntityRetriever<'_> {
    pub fn retrieve_keyword(&self, keyword: &str) -> Result<KeywordHits, RetrievalError> {
        let RetrievalLimits { top_k_first, top_k_final } = self.limits;
        let columns = rerank(
            keyword,
            &retrieve_columns(keyword, self.catalog, self.scorer, top_k_first),
            self.reranker,
            top_k_final,
        );
        let values = rerank(
            keyword,
            &retrieve_values(keyword, self.scorer, self.catalog, top_k_first),
            self.reranker,
            top_k_final,
        );
        let first = self.descriptions.nearest(keyword, self.embedder, top_k_first)?;
        let descriptions = rerank(keyword, &first, self.reranker, top_k_final);
        Ok(KeywordHits { keyword: keyword.to_string(), columns, values, descriptions })
    }

    pub fn retrieve(&self, keywords: &[String]) -> Result<(RetrievedEntities, Vec<KeywordHits>), RetrievalError> {
        let hits: Vec<KeywordHits> = keywords.iter().map(|k| self.retrieve_keyword(k)).collect::<Result<_, _>>()?;
        let lists: Vec<Vec<RetrievalCandidate>> =
            hits.iter().map(|h| h.columns.iter().chain(&h.values).chain(&h.descriptions).cloned().collect()).collect();
        let entities = assemble_entities(&lists, self.catalog)?;
        Ok((entities, hits))
    }
}
