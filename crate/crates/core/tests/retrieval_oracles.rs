use std::collections::BTreeSet;

use nlsql_core::bm25::Bm25Stats;
use nlsql_core::catalog::{
    build_value_index, ColumnKind, ColumnSchema, DatabaseCatalog, DescriptionEntry, TableSchema,
};
use nlsql_core::llm::Embedder;
use nlsql_core::minhash::{minhash_estimate, MinHasher};
use nlsql_core::retrieval::{
    cosine_similarity, rerank, retrieve_columns, retrieve_values, Bm25Index, DescriptionStore, EmbeddingCache,
    EntityScorer, HashingEmbedder, LexicalReranker, RetrievalCandidate,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lowercase character trigrams; shorter strings are their own shingle.
fn oracle_shingles(s: &str) -> BTreeSet<String> {
    let chars: Vec<char> = s.to_lowercase().chars().collect();
    if chars.len() < 3 {
        return std::iter::once(chars.into_iter().collect()).collect();
    }
    (0..=chars.len() - 3).map(|i| chars[i..i + 3].iter().collect()).collect()
}

fn oracle_jaccard(a: &str, b: &str) -> f64 {
    let (x, y) = (oracle_shingles(a), oracle_shingles(b));
    let inter = x.intersection(&y).count();
    inter as f64 / x.union(&y).count() as f64
}

fn random_word(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| char::from(b'a' + rng.gen_range(0..8u8))).collect()
}

fn mutate(rng: &mut ChaCha8Rng, s: &str, edits: usize) -> String {
    let mut chars: Vec<char> = s.chars().collect();
    for _ in 0..edits {
        let pos = rng.gen_range(0..chars.len());
        match rng.gen_range(0..3) {
            0 => chars[pos] = char::from(b'a' + rng.gen_range(0..8u8)),
            1 => chars.insert(pos, char::from(b'a' + rng.gen_range(0..8u8))),
            _ if chars.len() > 1 => {
                chars.remove(pos);
            }
            _ => {}
        }
    }
    chars.into_iter().collect()
}

#[test]
fn minhash_estimates_stay_within_three_standard_errors() {
    let hasher = MinHasher::new(128, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let pairs = 1500;
    let mut within = 0;
    let mut spread = [0usize; 3];
    for _ in 0..pairs {
        let len = rng.gen_range(4..40);
        let a = random_word(&mut rng, len);
        let edits = rng.gen_range(0..12);
        let b = if rng.gen_bool(0.1) {
            let len = rng.gen_range(4..40);
            random_word(&mut rng, len)
        } else {
            mutate(&mut rng, &a, edits)
        };
        let j = oracle_jaccard(&a, &b);
        let est = minhash_estimate(&hasher.signature(&a), &hasher.signature(&b)).unwrap();
        if (est - j).abs() <= 3.0 * (j * (1.0 - j) / 128.0).sqrt() + 1e-12 {
            within += 1;
        }
        spread[if j < 0.33 {
            0
        } else if j < 0.66 {
            1
        } else {
            2
        }] += 1;
    }
    assert!(spread.iter().all(|&n| n > 100), "pairs do not cover the range: {spread:?}");
    assert!(within as f64 >= 0.99 * pairs as f64, "{within}/{pairs}");
}

#[test]
fn oracle_jaccard_agrees_with_library() {
    for (a, b) in [("night", "nacht"), ("abc", "abc"), ("ab", "abc"), ("Paris", "paris"), ("x", "y")] {
        let j = nlsql_core::text::jaccard(&nlsql_core::text::shingles(a), &nlsql_core::text::shingles(b));
        assert!((j - oracle_jaccard(a, b)).abs() < 1e-12, "{a} {b}");
    }
}

#[derive(serde::Deserialize)]
struct Bm25Fixture {
    k1: f64,
    b: f64,
    avg_doc_length: f64,
    corpus: Vec<String>,
    queries: Vec<Bm25Query>,
}

#[derive(serde::Deserialize)]
struct Bm25Query {
    terms: Vec<String>,
    scores: Vec<f64>,
}

/// Ten-document corpus with scores evaluated separately with a calculator
/// script.
fn bm25_fixture() -> Bm25Fixture {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bm25_corpus.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Okapi BM25 written out term by term: idf = ln(1 + (N − n + 0.5)/(n + 0.5)).
fn okapi(corpus: &[String], query: &[&str], doc: usize, k1: f64, b: f64) -> f64 {
    let docs: Vec<Vec<&str>> = corpus.iter().map(|d| d.split(' ').collect()).collect();
    let n_docs = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n_docs;
    let d = &docs[doc];
    let mut total = 0.0;
    for q in query {
        let f = d.iter().filter(|w| *w == q).count() as f64;
        if f == 0.0 {
            continue;
        }
        let n = docs.iter().filter(|x| x.contains(q)).count() as f64;
        let idf = (1.0 + (n_docs - n + 0.5) / (n + 0.5)).ln();
        total += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * d.len() as f64 / avgdl));
    }
    total
}

fn corpus_stats(corpus: &[String], k1: f64, b: f64) -> Bm25Stats {
    Bm25Stats::build(corpus.iter().map(|d| d.split(' ').map(str::to_string).collect::<Vec<_>>()), k1, b)
}

#[test]
fn bm25_matches_hand_evaluated_values() {
    let fx = bm25_fixture();
    assert_eq!(fx.corpus.len(), 10);
    let stats = corpus_stats(&fx.corpus, fx.k1, fx.b);
    assert!((stats.avg_doc_length() - fx.avg_doc_length).abs() < 1e-12);
    for q in &fx.queries {
        for (doc, want) in q.scores.iter().enumerate() {
            let got = stats.score(&q.terms, doc).unwrap();
            assert!((got - want).abs() < 1e-9, "{:?} doc {doc}: {got} vs {want}", q.terms);
        }
    }
}

#[test]
fn bm25_matches_okapi_formula_across_parameters() {
    let fx = bm25_fixture();
    let queries: [&[&str]; 6] = [&["the"], &["brown"], &["mat", "log"], &["dogs"], &["missing"], &["the", "the"]];
    for (k1, b) in [(1.2, 0.75), (2.0, 0.0), (0.5, 1.0)] {
        let stats = corpus_stats(&fx.corpus, k1, b);
        for q in queries {
            for doc in 0..fx.corpus.len() {
                let got = stats.score(q, doc).unwrap();
                assert!((got - okapi(&fx.corpus, q, doc, k1, b)).abs() < 1e-9, "{q:?} {doc} k1={k1} b={b}");
            }
        }
    }
}

fn column(name: &str, values: Vec<String>) -> ColumnSchema {
    ColumnSchema { name: name.to_string(), declared_type: "TEXT".into(), kind: ColumnKind::Text, sample_values: values }
}

type TableSpec = (String, Vec<(String, Vec<String>)>);

fn catalog_from(tables: Vec<TableSpec>) -> DatabaseCatalog {
    DatabaseCatalog {
        db_id: "gen".into(),
        db_path: Default::default(),
        tables: tables
            .into_iter()
            .map(|(t, cols)| TableSchema { name: t, columns: cols.into_iter().map(|(c, v)| column(&c, v)).collect() })
            .collect(),
        descriptions: Vec::new(),
    }
}

fn arb_catalog() -> impl Strategy<Value = DatabaseCatalog> {
    let value = prop_oneof!["[a-z]{1,8}( [a-z]{1,6})?", "[0-9]{1,4}", "[0-9]{1,3}\\.[0-9]{1,2}", "[a-z]{2}-[0-9]{2}"];
    let col = ("[a-z]{2,6}(_[a-z]{2,5})?", proptest::collection::btree_set(value, 0..8));
    let table = ("t_[a-z]{2,5}", proptest::collection::btree_map(col.0, col.1, 1..5));
    proptest::collection::btree_map(table.0, table.1, 1..4).prop_map(|tables| {
        catalog_from(
            tables
                .into_iter()
                .map(|(t, cols)| (t, cols.into_iter().map(|(c, v)| (c, v.into_iter().collect())).collect()))
                .collect(),
        )
    })
}

fn arb_keyword() -> impl Strategy<Value = String> {
    prop_oneof!["[a-z]{1,8}", "[0-9]{1,4}", "[0-9]{1,3}\\.[0-9]", "[a-z]{2}-[0-9]{2}", "[a-z]{2,5}_[a-z]{2,4}"]
}

fn scorers(catalog: &DatabaseCatalog) -> Vec<Box<dyn EntityScorer>> {
    vec![Box::new(build_value_index(catalog, 64, 3).unwrap()), Box::new(Bm25Index::build(catalog, 1.2, 0.75))]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn column_candidates_are_positive_and_bounded(catalog in arb_catalog(), keyword in arb_keyword()) {
        for scorer in scorers(&catalog) {
            let out = retrieve_columns(&keyword, &catalog, scorer.as_ref(), 5);
            prop_assert!(out.len() <= 5);
            for c in &out {
                prop_assert!(c.score > 0.0);
                prop_assert!(catalog.column(&c.table, &c.column).is_some());
            }
            let positive = scorer.column_scores(&keyword).iter().filter(|s| s.2 > 0.0).count();
            prop_assert_eq!(out.len(), positive.min(5));
        }
    }

    #[test]
    fn numeric_keywords_match_values_exactly(catalog in arb_catalog(), keyword in "[0-9]{1,4}") {
        for scorer in scorers(&catalog) {
            let out = retrieve_values(&keyword, scorer.as_ref(), &catalog, 5);
            // Same literal, or the same integer written without leading zeros.
            let plain = keyword.parse::<u64>().unwrap().to_string();
            let same = |v: &String| *v == keyword || *v == plain;
            let exact = catalog.column_refs().flat_map(|(_, c)| &c.sample_values).filter(|v| same(v)).count();
            prop_assert_eq!(out.len(), exact.min(5));
            for c in &out {
                prop_assert!(same(&c.payload));
            }
        }
    }

    #[test]
    fn mixed_keywords_take_top_five_without_threshold(catalog in arb_catalog(), keyword in "[a-z]{2}-[0-9]{2}|[a-z]{1,8}") {
        for scorer in scorers(&catalog) {
            let out = retrieve_values(&keyword, scorer.as_ref(), &catalog, 5);
            let total = catalog.num_values();
            prop_assert_eq!(out.len(), total.min(5));
            // Best first and nothing better left behind.
            for w in out.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
            if let Some(last) = out.last() {
                let better = scorer.value_scores(&keyword).iter().filter(|s| s.3 > last.score).count();
                prop_assert!(better < out.len());
            }
        }
    }

    #[test]
    fn rerank_keeps_a_subset_of_at_most_two(catalog in arb_catalog(), keyword in arb_keyword()) {
        for scorer in scorers(&catalog) {
            let first = retrieve_values(&keyword, scorer.as_ref(), &catalog, 5);
            let out = rerank(&keyword, &first, &LexicalReranker, 2);
            prop_assert!(out.len() <= 2);
            prop_assert_eq!(out.len(), first.len().min(2));
            for c in &out {
                let mut plain = c.clone();
                plain.rerank_score = None;
                prop_assert!(first.contains(&plain));
            }
        }
    }
}

#[test]
fn failing_reranker_falls_back_to_first_stage_order() {
    struct Broken;
    impl nlsql_core::llm::Reranker for Broken {
        fn score(&self, _: &str, _: &[String]) -> Result<Vec<f64>, nlsql_core::llm::LlmError> {
            Err(nlsql_core::llm::LlmError::Transport("down".into()))
        }
    }
    let cands: Vec<RetrievalCandidate> = (0..4)
        .map(|i| {
            RetrievalCandidate::new(
                nlsql_core::retrieval::CandidateKind::TableValue,
                "t",
                "c",
                format!("v{i}"),
                f64::from(i),
            )
        })
        .collect();
    let out = rerank("v", &cands, &Broken, 2);
    assert_eq!(out.iter().map(|c| c.payload.as_str()).collect::<Vec<_>>(), ["v3", "v2"]);
}

#[test]
fn description_top_five_matches_brute_force_cosine() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let words = ["city", "name", "amount", "date", "order", "client", "country", "price", "total", "code"];
    let mut catalog = catalog_from(vec![]);
    for t in 0..4 {
        let cols: Vec<(String, Vec<String>)> = (0..6).map(|c| (format!("c{c}"), vec![])).collect();
        catalog.tables.push(TableSchema {
            name: format!("t{t}"),
            columns: cols.into_iter().map(|(c, v)| column(&c, v)).collect(),
        });
        for c in 0..6 {
            let text: Vec<&str> = (0..rng.gen_range(2..6)).map(|_| words[rng.gen_range(0..words.len())]).collect();
            catalog.descriptions.push(DescriptionEntry {
                table: format!("t{t}"),
                column: format!("c{c}"),
                column_description: text.join(" "),
                value_description: String::new(),
            });
        }
    }
    let embedder = HashingEmbedder::new(256);
    let store = DescriptionStore::build(&catalog, &embedder, &mut EmbeddingCache::default()).unwrap();
    for query in ["city name", "total price", "order date code", "nothing like it"] {
        let q = embedder.embed(&[query.to_string()]).unwrap().remove(0);
        let mut brute: Vec<(f64, String, String)> = catalog
            .descriptions
            .iter()
            .map(|d| {
                let v = embedder.embed(&[d.text()]).unwrap().remove(0);
                let dot: f64 = q.iter().zip(&v).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
                let norm = |x: &[f32]| x.iter().map(|a| f64::from(*a).powi(2)).sum::<f64>().sqrt();
                (dot / (norm(&q) * norm(&v)), d.table.clone(), d.column.clone())
            })
            .collect();
        brute.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| (&a.1, &a.2).cmp(&(&b.1, &b.2))));
        let got = store.nearest(query, &embedder, 5).unwrap();
        assert_eq!(got.len(), 5);
        for (g, b) in got.iter().zip(&brute) {
            assert!((g.score - b.0).abs() < 1e-6, "{query}");
            assert!((cosine_similarity(&q, &q) - 1.0).abs() < 1e-6);
        }
        // Equal scores may swap places only among themselves.
        let got_set: BTreeSet<(String, String)> = got.iter().map(|c| (c.table.clone(), c.column.clone())).collect();
        let cutoff = brute[4].0;
        for b in &brute {
            if b.0 > cutoff + 1e-6 {
                assert!(got_set.contains(&(b.1.clone(), b.2.clone())), "{query}: missing {b:?}");
            }
        }
    }
}
