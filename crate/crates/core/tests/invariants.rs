use indexmap::IndexMap;
use nlsql_core::evaluation::{calibrate, compare_results, has_top_level_order_by, CompareMode};
use nlsql_core::exec::SqlValue;
use nlsql_core::minhash::{minhash_estimate, MinHasher};
use nlsql_core::uqu::{parse_response, split_sizes, to_model_json, KeywordSet, TaskDecomposition};
use proptest::prelude::*;

fn arb_decomposition() -> impl Strategy<Value = TaskDecomposition> {
    proptest::collection::vec(("[a-z]{3,8}( [a-z]{2,8}){0,4}", 0usize..3), 1..4).prop_map(|mains| {
        let mut main_tasks = Vec::new();
        let mut sub_tasks = Vec::new();
        for (i, (text, subs)) in mains.iter().enumerate() {
            main_tasks.push(format!("{}. {text}", i + 1));
            for j in 0..*subs {
                sub_tasks.push(format!("{}.{} refine {text} part {j}", i + 1, j + 1));
            }
        }
        TaskDecomposition::normalized(main_tasks, sub_tasks).unwrap()
    })
}

fn arb_keywords() -> impl Strategy<Value = KeywordSet> {
    (
        proptest::collection::vec("[a-z]{2,8}( [a-z]{2,6})?", 0..5),
        proptest::collection::btree_map("[a-z]{3,8}", "[A-Za-z0-9/ ]{1,10}", 0..3),
    )
        .prop_map(|(objects, imps)| {
            let map: IndexMap<String, String> = imps.into_iter().collect();
            KeywordSet::normalized(objects, map)
        })
}

fn row(values: &[i64]) -> Vec<SqlValue> {
    values.iter().map(|v| SqlValue::Integer(*v)).collect()
}

proptest! {
    #[test]
    fn model_json_round_trips(d in arb_decomposition(), k in arb_keywords(), prose in "[A-Za-z ]{0,20}") {
        let reply = format!("{prose}\n```json\n{}\n```\n{prose}", to_model_json(&d, &k));
        let (d2, k2) = parse_response(&reply).unwrap();
        prop_assert_eq!(d2, d);
        prop_assert_eq!(k2, k);
    }

    #[test]
    fn split_sizes_partition(n in 0usize..5000) {
        let (train, val, test) = split_sizes(n);
        prop_assert_eq!(train + val + test, n);
        prop_assert!((train as f64 - 0.7 * n as f64).abs() <= 0.5 + 1e-9);
    }

    #[test]
    fn minhash_is_deterministic_and_symmetric(a in "[a-z ]{1,30}", b in "[a-z ]{1,30}", seed in 0u64..1000) {
        let h1 = MinHasher::new(64, seed);
        let h2 = MinHasher::new(64, seed);
        prop_assert_eq!(h1.signature(&a), h2.signature(&a));
        let ab = minhash_estimate(&h1.signature(&a), &h1.signature(&b)).unwrap();
        let ba = minhash_estimate(&h1.signature(&b), &h1.signature(&a)).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(minhash_estimate(&h1.signature(&a), &h1.signature(&a.to_uppercase())).unwrap(), 1.0);
    }

    #[test]
    fn unordered_comparison_ignores_row_order(rows in proptest::collection::vec(proptest::collection::vec(-5i64..5, 2), 0..12), seed in any::<u64>()) {
        let pred: Vec<_> = rows.iter().map(|r| row(r)).collect();
        let mut shuffled = pred.clone();
        // Deterministic rotation plus reversal as the permutation.
        if !shuffled.is_empty() {
            let k = (seed as usize) % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
        }
        prop_assert!(compare_results(&pred, &shuffled, false, CompareMode::Multiset));
        prop_assert!(compare_results(&pred, &shuffled, false, CompareMode::Set));
        let mut extra = shuffled.clone();
        extra.push(row(&[99, 99]));
        prop_assert!(!compare_results(&pred, &extra, false, CompareMode::Multiset));
    }

    #[test]
    fn ordered_comparison_detects_reversal(values in proptest::collection::btree_set(-50i64..50, 2..10)) {
        let asc: Vec<_> = values.iter().map(|v| row(&[*v])).collect();
        let desc: Vec<_> = asc.iter().rev().cloned().collect();
        prop_assert!(!compare_results(&asc, &desc, true, CompareMode::Multiset));
        prop_assert!(compare_results(&asc, &asc, true, CompareMode::Multiset));
    }

    #[test]
    fn calibration_is_increasing(x in 1.0f64..5.0, dx in 0.001f64..1.0) {
        prop_assert!(calibrate(x + dx) > calibrate(x));
    }
}

#[test]
fn order_by_detection_ignores_literals_comments_and_subqueries() {
    assert!(has_top_level_order_by("SELECT a FROM t ORDER BY a"));
    assert!(has_top_level_order_by("select a from t order\n by a"));
    assert!(!has_top_level_order_by("SELECT a FROM (SELECT a FROM t ORDER BY a)"));
    assert!(!has_top_level_order_by("SELECT 'order by' FROM t"));
    assert!(!has_top_level_order_by("SELECT a FROM t -- order by a"));
}
