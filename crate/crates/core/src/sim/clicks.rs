//! Seed derivation and the position-based click model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{ItemId, UserId};

pub const SPLIT_STREAM: &str = "split";
pub const TRAIN_STREAM: &str = "train";
pub const CLICK_STREAM: &str = "clicks";

/// Stable seed for `(global_seed, round, stream)`: the first eight bytes of
/// SHA-256 over the little-endian inputs and the label.
pub fn seed(global_seed: u64, round: u32, stream: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(round.to_le_bytes());
    h.update((stream.len() as u64).to_le_bytes());
    h.update(stream.as_bytes());
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

/// Acceptance probability `exp(alpha * rank)` for a 1-based rank.
pub fn acceptance_probability(alpha: f64, rank: usize) -> f64 {
    (alpha * rank as f64).exp().min(1.0)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickOutcome {
    /// `(user, item, rank)` with 1-based rank.
    pub accepted: Vec<(UserId, ItemId, u32)>,
    pub offered: usize,
}

impl ClickOutcome {
    pub fn pairs(&self) -> Vec<(UserId, ItemId)> {
        self.accepted.iter().map(|&(u, i, _)| (u, i)).collect()
    }
}

/// Independent Bernoulli acceptance per slot, every slot offered.
pub fn simulate_clicks(lists: &[Vec<ItemId>], alpha: f64, rng_seed: u64) -> ClickOutcome {
    simulate_clicks_where(lists, alpha, rng_seed, |_, _| true)
}

/// Like [`simulate_clicks`], but slots for which `offer(user, item)` is false
/// are not offered. Each user draws from its own substream, and a draw is
/// consumed for every slot, so outcomes do not depend on evaluation order or on
/// which other slots were offered.
pub fn simulate_clicks_where<F>(lists: &[Vec<ItemId>], alpha: f64, rng_seed: u64, offer: F) -> ClickOutcome
where
    F: Fn(UserId, ItemId) -> bool,
{
    let mut out = ClickOutcome::default();
    for (u, list) in lists.iter().enumerate() {
        let user = u as UserId;
        let mut rng = ChaCha8Rng::seed_from_u64(seed(rng_seed, user, "user"));
        for (pos, &item) in list.iter().enumerate() {
            let rank = pos + 1;
            let draw: f64 = rng.random();
            if !offer(user, item) {
                continue;
            }
            out.offered += 1;
            if draw < acceptance_probability(alpha, rank) {
                out.accepted.push((user, item, rank as u32));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(seed(7, 3, SPLIT_STREAM), seed(7, 3, SPLIT_STREAM));
        assert_ne!(seed(7, 3, SPLIT_STREAM), seed(7, 3, TRAIN_STREAM));
        assert_ne!(seed(7, 3, SPLIT_STREAM), seed(7, 4, SPLIT_STREAM));
        assert_ne!(seed(7, 3, SPLIT_STREAM), seed(8, 3, SPLIT_STREAM));
    }

    #[test]
    fn stream_labels_do_not_collide() {
        let mut seen = HashSet::new();
        for s in 0..10_000u64 {
            for label in [SPLIT_STREAM, TRAIN_STREAM, CLICK_STREAM] {
                assert!(seen.insert(seed(s, 1, label)));
            }
        }
    }

    #[test]
    fn rounds_do_not_collide() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let s: u64 = rng.random();
            assert_ne!(seed(s, 1, SPLIT_STREAM), seed(s, 2, SPLIT_STREAM));
        }
    }

    #[test]
    fn probability_values() {
        assert!((acceptance_probability(-0.5, 1) - 0.6065306597).abs() < 1e-9);
        assert_eq!(acceptance_probability(0.0, 7), 1.0);
        assert!((acceptance_probability(-0.5, 10) - (-5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn alpha_zero_accepts_everything() {
        let lists = vec![vec![1, 2, 3], vec![4]];
        let out = simulate_clicks(&lists, 0.0, 9);
        assert_eq!(out.offered, 4);
        assert_eq!(out.accepted, vec![(0, 1, 1), (0, 2, 2), (0, 3, 3), (1, 4, 1)]);
    }

    #[test]
    fn very_negative_alpha_accepts_nothing() {
        let lists = vec![(0..10).collect::<Vec<u32>>(); 50];
        assert!(simulate_clicks(&lists, -50.0, 1).accepted.is_empty());
    }

    #[test]
    fn deterministic_and_filter_independent() {
        let lists: Vec<Vec<u32>> = (0..20u32).map(|u| (0..10).map(|k| u * 10 + k).collect()).collect();
        let a = simulate_clicks(&lists, -0.5, 11);
        assert_eq!(a, simulate_clicks(&lists, -0.5, 11));
        let filtered = simulate_clicks_where(&lists, -0.5, 11, |_, i| i % 2 == 0);
        let expected: Vec<_> = a.accepted.iter().copied().filter(|&(_, i, _)| i % 2 == 0).collect();
        assert_eq!(filtered.accepted, expected);
        assert_eq!(filtered.offered, 100);
    }
}
