use indexmap::IndexMap;
use nlsql_core::evaluation::metrics::lcs_len;
use nlsql_core::evaluation::{bleu, keyword_f1, rouge};
use nlsql_core::uqu::KeywordSet;
use proptest::prelude::*;

const TOL: f64 = 1e-6;

/// Cases worked out by hand from clipped n-gram counts, brevity penalty and
/// LCS length.
#[derive(serde::Deserialize)]
struct HandCase {
    candidate: String,
    reference: String,
    bleu1: f64,
    bleu2: f64,
    rouge1: f64,
    rouge2: f64,
    #[serde(rename = "rougeL")]
    rouge_l: f64,
}

#[derive(serde::Deserialize)]
struct HandCases {
    cases: Vec<HandCase>,
}

#[test]
fn hand_computed_cases() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/metric_cases.json");
    let fx: HandCases = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert!(fx.cases.len() >= 3);
    for c in &fx.cases {
        let (cand, reference) = (c.candidate.as_str(), c.reference.as_str());
        let rs = rouge(cand, reference).unwrap();
        let got =
            [bleu(cand, reference, 1).unwrap(), bleu(cand, reference, 2).unwrap(), rs.rouge1, rs.rouge2, rs.rouge_l];
        let want = [c.bleu1, c.bleu2, c.rouge1, c.rouge2, c.rouge_l];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < TOL, "{cand:?} vs {reference:?}: {got:?}");
        }
    }
}

#[test]
fn identity_and_disjoint() {
    let text = "1. Find the rental price of the most expensive film";
    let rs = rouge(text, text).unwrap();
    for v in [
        bleu(text, text, 1).unwrap(),
        bleu(text, text, 2).unwrap(),
        bleu(text, text, 4).unwrap(),
        rs.rouge1,
        rs.rouge2,
        rs.rouge_l,
    ] {
        assert!((v - 1.0).abs() < 1e-12);
    }
    let rs = rouge("alpha beta gamma", "delta epsilon").unwrap();
    for v in [bleu("alpha beta gamma", "delta epsilon", 1).unwrap(), rs.rouge1, rs.rouge2, rs.rouge_l] {
        assert_eq!(v, 0.0);
    }
}

fn objects(list: &[&str]) -> KeywordSet {
    KeywordSet::normalized(list.iter().copied(), IndexMap::new())
}

#[test]
fn keyword_error_table_rows() {
    // Missed keyword: P = 1, R = 2/3.
    let miss = keyword_f1(&objects(&["title", "keywords"]), &objects(&["title", "keywords", "episode"]));
    assert!((miss.precision - 1.0).abs() < TOL);
    assert!((miss.recall - 2.0 / 3.0).abs() < TOL);
    assert!((miss.f1 - 0.8).abs() < TOL);
    // Wrong keyword: nothing overlaps.
    let wrong = keyword_f1(&objects(&["statement"]), &objects(&["need statement"]));
    assert_eq!(wrong.f1, 0.0);
    // Useless keyword: P = 3/4, R = 1.
    let useless = keyword_f1(
        &objects(&["tax code", "business", "inspection type", "name"]),
        &objects(&["tax code", "business", "inspection type"]),
    );
    assert!((useless.f1 - 6.0 / 7.0).abs() < TOL);
}

/// Longest common subsequence by trying every subset of `a`.
fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    let is_subseq = |s: &[u8]| {
        let mut it = b.iter();
        s.iter().all(|x| it.any(|y| y == x))
    };
    (0u32..1 << a.len())
        .map(|mask| (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect::<Vec<_>>())
        .filter(|s| is_subseq(s))
        .map(|s| s.len())
        .max()
        .unwrap_or(0)
}

proptest! {
    #[test]
    fn lcs_matches_brute_force(a in proptest::collection::vec(0u8..4, 0..9), b in proptest::collection::vec(0u8..4, 0..9)) {
        prop_assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b));
    }

    #[test]
    fn scores_are_bounded(c in "[a-d ]{1,30}", r in "[a-d]{1,3}( [a-d]{1,3}){0,6}") {
        let rs = rouge(&c, &r).unwrap();
        for v in [bleu(&c, &r, 1).unwrap(), bleu(&c, &r, 2).unwrap(), rs.rouge1, rs.rouge2, rs.rouge_l] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
    }
}
