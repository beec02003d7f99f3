//! Property suites over the data, fold-in and metric invariants.

use std::collections::HashMap;

use proptest::prelude::*;

use warmfold::data::GraphStats;
use warmfold::data::{
    beta_item_from_degree, beta_user_from_degree, build_matrix, temporal_split, Event,
    InteractionLog,
};
use warmfold::eval::{coverage, hit_rate, ndcg, topk};
use warmfold::foldin::{build_plan, linear_foldin, FoldInRequest};
use warmfold::linalg::{truncated_svd, DenseMatrix, TruncatedSvd};
use warmfold::model::{EmbeddingModel, ModelKind};

fn arb_events(max_users: u32, max_items: u32, max_len: usize) -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec(
        (0..max_users, 0..max_items, 0i64..500).prop_map(|(user, item, timestamp)| Event {
            user,
            item,
            timestamp,
        }),
        1..max_len,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn beta_user_strictly_decreasing(d in 1u32..10_000) {
        let a: f64 = beta_user_from_degree(d).unwrap();
        let b: f64 = beta_user_from_degree(d + 1).unwrap();
        prop_assert!(a > b);
        prop_assert!(a > 0.0);
    }

    #[test]
    fn beta_item_strictly_decreasing_and_bounded(d in 0u32..10_000) {
        let a: f64 = beta_item_from_degree(d);
        let b: f64 = beta_item_from_degree(d + 1);
        prop_assert!(a > b);
        prop_assert!(a > 0.0 && a <= 1.0);
    }

    #[test]
    fn matrix_row_sums_match_dictionary_count(events in arb_events(30, 40, 400)) {
        let log = InteractionLog::new(events.clone(), 30, 40).unwrap();
        let matrix = build_matrix(&log, (30, 40)).unwrap();
        let mut distinct: HashMap<u32, std::collections::HashSet<u32>> = HashMap::new();
        for e in &events {
            distinct.entry(e.user).or_default().insert(e.item);
        }
        for u in 0..30u32 {
            let expected = distinct.get(&u).map_or(0, |s| s.len());
            prop_assert_eq!(matrix.row(u as usize).len(), expected);
        }
        // all values are implicitly one: nnz equals the number of distinct pairs
        let total: usize = distinct.values().map(|s| s.len()).sum();
        prop_assert_eq!(matrix.nnz(), total);
    }

    #[test]
    fn split_is_sound(events in arb_events(20, 20, 300)) {
        let log = InteractionLog::new(events, 20, 20).unwrap();
        match temporal_split(&log, (0.8, 0.1, 0.1)) {
            Err(_) => {} // degenerate timestamp structure is a legal outcome
            Ok(split) => {
                prop_assert_eq!(
                    split.train.len() + split.warm.len() + split.test.len(),
                    log.len()
                );
                prop_assert!(!split.train.is_empty());
                prop_assert!(!split.warm.is_empty());
                prop_assert!(!split.test.is_empty());
                let max_train = split.train.events().iter().map(|e| e.timestamp).max().unwrap();
                let min_warm = split.warm.events().iter().map(|e| e.timestamp).min().unwrap();
                let max_warm = split.warm.events().iter().map(|e| e.timestamp).max().unwrap();
                let min_test = split.test.events().iter().map(|e| e.timestamp).min().unwrap();
                prop_assert!(max_train < min_warm);
                prop_assert!(max_warm < min_test);
                prop_assert!(max_train <= split.t1 && split.t1 < min_warm);
                prop_assert!(max_warm <= split.t2 && split.t2 < min_test);
            }
        }
    }

    #[test]
    fn hr_monotone_in_k_and_bounded(
        lists in prop::collection::vec(prop::collection::vec(0usize..50, 10), 1..8),
        truths in prop::collection::vec(prop::collection::vec(0u32..50, 0..5), 8),
    ) {
        let hr5 = hit_rate(&lists, &truths[..lists.len()], 5);
        let hr10 = hit_rate(&lists, &truths[..lists.len()], 10);
        prop_assert!((0.0..=1.0).contains(&hr5));
        prop_assert!((0.0..=1.0).contains(&hr10));
        prop_assert!(hr5 <= hr10 + 1e-12);
        let n10 = ndcg(&lists, &truths[..lists.len()], 10);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n10));
        let cov = coverage(&lists, 10, 50);
        prop_assert!((0.0..=1.0).contains(&cov));
    }

    #[test]
    fn topk_is_sorted_and_exclusion_free(
        scores in prop::collection::vec(-100i32..100, 30),
        mask in prop::collection::vec(any::<bool>(), 30),
    ) {
        let scores: Vec<f64> = scores.into_iter().map(|s| s as f64 / 7.0).collect();
        let candidates = mask.iter().filter(|&&e| !e).count();
        let k = candidates.min(5);
        let top = topk(&scores, k, &mask).unwrap();
        for w in top.windows(2) {
            let better = scores[w[0]] > scores[w[1]]
                || (scores[w[0]] == scores[w[1]] && w[0] < w[1]);
            prop_assert!(better, "not in order: {:?}", w);
        }
        for &i in &top {
            prop_assert!(!mask[i]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn linear_foldin_scale_equivariant_and_idempotent(
        seed in 0u64..1000,
        scale in 0.1f64..10.0,
        support in prop::collection::btree_set(0u32..40, 1..8),
    ) {
        let mut rng = warmfold::rng::stream(seed, warmfold::rng::Stream::Misc);
        let items = DenseMatrix::from_fn(40, 6, |_, _| warmfold::rng::standard_normal::<f64>(&mut rng));
        let model = EmbeddingModel {
            kind: ModelKind::UltraGcn,
            user_embeddings: DenseMatrix::zeros(2, 6),
            item_embeddings: items,
            stats: GraphStats::from_degrees(vec![3, 3], (0..40).map(|i| i % 11).collect()),
            sigma: None,
            rank: 6,
            lambda: 1.0,
        };
        let plan = build_plan(&model).unwrap();
        let req = FoldInRequest::binary(0, support.iter().copied().collect(), 0.8);
        let a = linear_foldin(&plan, &req).unwrap();
        let b = linear_foldin(&plan, &req).unwrap();
        prop_assert_eq!(&a, &b, "fold-in must be bitwise idempotent");

        let mut scaled = req.clone();
        for v in scaled.values.iter_mut() {
            *v *= scale;
        }
        let c = linear_foldin(&plan, &scaled).unwrap();
        for (x, y) in a.iter().zip(&c) {
            prop_assert!((y - scale * x).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn svd_factors_orthonormal_on_random_sparse(seed in 0u64..200) {
        let mut rng = warmfold::rng::stream(seed, warmfold::rng::Stream::Misc);
        use rand::Rng;
        let mut events = Vec::new();
        for u in 0..25u32 {
            for i in 0..18u32 {
                if rng.gen::<f64>() < 0.2 {
                    events.push(Event { user: u, item: i, timestamp: 0 });
                }
            }
            events.push(Event { user: u, item: u % 18, timestamp: 0 });
        }
        let log = InteractionLog::new(events, 25, 18).unwrap();
        let matrix = build_matrix(&log, (25, 18)).unwrap();
        let svd: TruncatedSvd<f64> = truncated_svd(&matrix, 5, seed).unwrap();
        for factors in [&svd.left, &svd.right] {
            for a in 0..factors.cols() {
                for b in 0..factors.cols() {
                    let dot: f64 = factors
                        .column(a)
                        .iter()
                        .zip(factors.column(b))
                        .map(|(x, y)| x * y)
                        .sum();
                    let target = if a == b { 1.0 } else { 0.0 };
                    prop_assert!((dot - target).abs() < 1e-8, "col {a} . col {b} = {dot}");
                }
            }
        }
        for w in svd.singular_values.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        prop_assert!(svd.singular_values.iter().all(|&s| s >= 0.0));
    }
}
