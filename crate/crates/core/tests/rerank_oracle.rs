//! Reranker against exhaustive search over every K-subset per user.

mod common;

use common::brute_rerank;
use exposim::dataset::ItemId;
use exposim::metrics::ExposureLedger;
use exposim::rerank::{
    discrepancy, dynamic_targets, dynamic_targets_capped, listing_caps, rank_cost, rerank, static_targets,
    RerankConfig, TargetMode, TargetVector,
};
use proptest::prelude::*;

fn long_lists(m: usize, l: usize) -> impl Strategy<Value = Vec<Vec<ItemId>>> {
    proptest::collection::vec(
        Just((0..m as ItemId).collect::<Vec<_>>()).prop_shuffle().prop_map(move |v| v[..l].to_vec()),
        1..=3,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_exhaustive_search(
        long in long_lists(6, 4),
        k in 1usize..=3,
        raw_targets in proptest::collection::vec(0i64..4, 6),
    ) {
        let listed: Vec<bool> = (0..6).map(|i| long.iter().flatten().any(|&x| x == i)).collect();
        let targets = TargetVector {
            targets: raw_targets.iter().zip(&listed).map(|(&t, &b)| if b { t } else { 0 }).collect(),
            listed,
            mode: TargetMode::Static,
        };
        let cfg = RerankConfig { k, l: 4, ..RerankConfig::default() };
        let out = rerank(&long, &targets, &cfg).unwrap();
        for (fin, l) in out.lists.iter().zip(&long) {
            prop_assert_eq!(fin.len(), k);
            // final lists keep long-list order
            let pos: Vec<usize> = fin.iter().map(|i| l.iter().position(|x| x == i).unwrap()).collect();
            prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
        }
        let got = (discrepancy(&out.lists, &targets).total, rank_cost(&long, &out.lists));
        prop_assert_eq!(got, brute_rerank(&long, &targets, k));
    }

    #[test]
    fn static_targets_never_exceed_slot_budget(long in long_lists(8, 5), k in 1usize..=5) {
        let t = static_targets(&long, k, 8).unwrap();
        prop_assert!(t.total() <= (long.len() * k) as i64);
        prop_assert!(t.total() + t.listed_count() as i64 > (long.len() * k) as i64);
    }

    #[test]
    fn normalized_targets_spend_the_budget(
        long in long_lists(8, 5),
        k in 1usize..=5,
        exposure in proptest::collection::vec(0.0f64..5.0, 8),
    ) {
        let s = static_targets(&long, k, 8).unwrap();
        prop_assume!(s.total() > 0);
        let mut ledger = ExposureLedger::<f64>::new(8);
        ledger.accumulate(1, exposure).unwrap();
        let d = dynamic_targets(&s, &ledger, 2, TargetMode::DynamicNormalized, 0.1, long.len(), k).unwrap();
        prop_assert_eq!(d.total(), (long.len() * k) as i64);
        for i in 0..8 {
            prop_assert!(d.targets[i] >= 0);
            if !s.listed[i] {
                prop_assert_eq!(d.targets[i], 0);
            }
        }
    }
}

proptest! {
    #[test]
    fn capped_targets_never_exceed_caps(
        long in long_lists(8, 5),
        k in 1usize..=5,
        exposure in proptest::collection::vec(0.0f64..5.0, 8),
        fraction in 0.1f64..=1.0,
    ) {
        let s = static_targets(&long, k, 8).unwrap();
        let mut ledger = ExposureLedger::<f64>::new(8);
        ledger.accumulate(1, exposure).unwrap();
        let caps = listing_caps(&long, 8, fraction);
        let d = dynamic_targets_capped(&s, &ledger, 2, 0.1, &caps, long.len(), k).unwrap();
        let budget = (long.len() * k) as i64;
        prop_assert!(d.total() <= budget);
        for (&t, &cap) in d.targets.iter().zip(&caps) {
            prop_assert!(t >= 0 && t <= cap);
        }
        // the budget is spent unless every weighted item sits at its cap
        let weighted_caps: i64 = (0..8).filter(|&i| s.targets[i] > 0).map(|i| caps[i]).sum();
        prop_assert_eq!(d.total(), budget.min(weighted_caps));
    }
}

#[test]
fn overflow_weight_dominates_rank_cost() {
    // one item with target 0 sits on top of every list; avoiding it costs rank
    let long = vec![vec![0, 1, 2, 3], vec![0, 2, 1, 3], vec![0, 3, 2, 1]];
    let targets = TargetVector {
        targets: vec![0, 1, 1, 1],
        listed: vec![true; 4],
        mode: TargetMode::Static,
    };
    let cfg = RerankConfig { k: 1, l: 4, ..RerankConfig::default() };
    let out = rerank(&long, &targets, &cfg).unwrap();
    assert_eq!(discrepancy(&out.lists, &targets).total, 0);
    assert_eq!(out.lists, vec![vec![1], vec![2], vec![3]]);
}
