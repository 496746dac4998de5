//! Position-weighted exposure, its running ledger, and evaluation metrics.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{InteractionStore, ItemId};
use crate::scalar::{position_weight, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("round {0} already recorded")]
    DuplicateRound(u32),
    #[error("exposure vector has {got} entries, catalog has {expected}")]
    Length { expected: usize, got: usize },
    #[error("exposure must be finite and nonnegative")]
    InvalidExposure,
    #[error("exposure is zero everywhere (no recommendations made)")]
    NoExposure,
    #[error("gini needs at least two items, got {0}")]
    TooFewItems(usize),
}

/// Exposure per catalog item for one round of lists: `sum over users of 1/log2(1+k)`
/// for the rank `k` at which the item appears. Positions beyond `k_max` are ignored.
pub fn round_exposure<S: Scalar>(lists: &[Vec<ItemId>], k_max: usize, m: usize) -> Vec<S> {
    let weights: Vec<S> = (1..=k_max).map(position_weight).collect();
    let mut exposure = vec![S::zero(); m];
    for list in lists {
        for (item, &w) in list.iter().zip(&weights) {
            exposure[*item as usize] = exposure[*item as usize] + w;
        }
    }
    exposure
}

/// Per-round and cumulative item exposure.
#[derive(Clone, Debug, PartialEq)]
pub struct ExposureLedger<S> {
    m: usize,
    per_round: BTreeMap<u32, Vec<S>>,
    cumulative: Vec<S>,
    seen: Vec<bool>,
    seen_count: usize,
}

impl<S: Scalar> ExposureLedger<S> {
    pub fn new(m: usize) -> Self {
        ExposureLedger {
            m,
            per_round: BTreeMap::new(),
            cumulative: vec![S::zero(); m],
            seen: vec![false; m],
            seen_count: 0,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn accumulate(&mut self, round: u32, exposure: Vec<S>) -> Result<(), MetricsError> {
        if self.per_round.contains_key(&round) {
            return Err(MetricsError::DuplicateRound(round));
        }
        if exposure.len() != self.m {
            return Err(MetricsError::Length {
                expected: self.m,
                got: exposure.len(),
            });
        }
        if exposure.iter().any(|x| !x.is_finite() || *x < S::zero()) {
            return Err(MetricsError::InvalidExposure);
        }
        for (i, &x) in exposure.iter().enumerate() {
            self.cumulative[i] = self.cumulative[i] + x;
            if x > S::zero() && !self.seen[i] {
                self.seen[i] = true;
                self.seen_count += 1;
            }
        }
        self.per_round.insert(round, exposure);
        Ok(())
    }

    pub fn cumulative(&self) -> &[S] {
        &self.cumulative
    }

    /// Cumulative exposure over recorded rounds `<= round`.
    pub fn cumulative_through(&self, round: u32) -> Vec<S> {
        let mut acc = vec![S::zero(); self.m];
        for exp in self.per_round.range(..=round).map(|(_, e)| e) {
            for (a, &x) in acc.iter_mut().zip(exp) {
                *a = *a + x;
            }
        }
        acc
    }

    pub fn round(&self, round: u32) -> Option<&[S]> {
        self.per_round.get(&round).map(Vec::as_slice)
    }

    pub fn rounds(&self) -> impl Iterator<Item = u32> + '_ {
        self.per_round.keys().copied()
    }

    pub fn round_count(&self) -> usize {
        self.per_round.len()
    }

    pub fn last_round(&self) -> Option<u32> {
        self.per_round.keys().next_back().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.per_round.is_empty()
    }

    pub fn seen_count(&self) -> usize {
        self.seen_count
    }

    pub fn was_seen(&self, item: ItemId) -> bool {
        self.seen[item as usize]
    }

    /// Binary checkpoint: magic `EXPL`, version, `m`, round count, then per round
    /// the round number followed by `m` little-endian `f64` exposures.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(LEDGER_MAGIC)?;
        w.write_all(&LEDGER_VERSION.to_le_bytes())?;
        w.write_all(&(self.m as u64).to_le_bytes())?;
        w.write_all(&(self.per_round.len() as u64).to_le_bytes())?;
        for (round, exp) in &self.per_round {
            w.write_all(&(*round as u64).to_le_bytes())?;
            for x in exp {
                w.write_all(&x.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> io::Result<Self> {
        let invalid = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_owned());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != LEDGER_MAGIC {
            return Err(invalid("not a ledger checkpoint"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != LEDGER_VERSION {
            return Err(invalid("unsupported ledger version"));
        }
        let mut b8 = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> io::Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let m = next_u64(&mut r)? as usize;
        let rounds = next_u64(&mut r)?;
        let mut ledger = ExposureLedger::new(m);
        for _ in 0..rounds {
            let round = next_u64(&mut r)? as u32;
            let mut exp = Vec::with_capacity(m);
            for _ in 0..m {
                exp.push(S::of(f64::from_le_bytes(next_u64(&mut r)?.to_le_bytes())));
            }
            ledger
                .accumulate(round, exp)
                .map_err(|e| invalid(&e.to_string()))?;
        }
        Ok(ledger)
    }
}

const LEDGER_MAGIC: &[u8; 4] = b"EXPL";
const LEDGER_VERSION: u32 = 1;

/// Mean nDCG@k with binary relevance (membership in the user's test profile)
/// over users with at least one test item. Returns the mean and the number of
/// eligible users; zero eligible users yields 0.
pub fn ndcg<S: Scalar>(lists: &[Vec<ItemId>], test: &InteractionStore, k: usize) -> (S, usize) {
    let mut total = S::zero();
    let mut eligible = 0usize;
    for (u, list) in lists.iter().enumerate() {
        let relevant = test.profile(u as u32);
        if relevant.is_empty() {
            continue;
        }
        eligible += 1;
        let dcg: S = list
            .iter()
            .take(k)
            .enumerate()
            .filter(|(_, item)| relevant.contains_key(item))
            .map(|(pos, _)| position_weight::<S>(pos + 1))
            .sum();
        let idcg: S = (1..=k.min(relevant.len())).map(position_weight::<S>).sum();
        if idcg > S::zero() {
            total = total + dcg / idcg;
        }
    }
    if eligible == 0 {
        log::warn!("ndcg: no user has test interactions; reporting 0");
        return (S::zero(), 0);
    }
    (total / S::of_usize(eligible), eligible)
}

/// Fraction of the catalog appearing in at least one list.
pub fn aggregate_diversity<S: Scalar>(lists: &[Vec<ItemId>], m: usize) -> S {
    let distinct: HashSet<ItemId> = lists.iter().flatten().copied().collect();
    S::of_usize(distinct.len()) / S::of_usize(m.max(1))
}

/// Fraction of the catalog exposed in any recorded round.
pub fn cumulative_aggregate_diversity<S: Scalar>(ledger: &ExposureLedger<S>, m: usize) -> S {
    S::of_usize(ledger.seen_count()) / S::of_usize(m.max(1))
}

/// Gini index with the `(m - 1)` normalization, so a single exposed item gives 1.
///
/// Computed from sorted values as `sum_j (2j - m - 1) x_(j) / ((m - 1) sum x)`,
/// pairing rank `j` with rank `m + 1 - j` so the numerator is a sum of
/// nonnegative gaps. Uniform input therefore yields exactly 0.
pub fn gini<S: Scalar>(exposure: &[S]) -> Result<S, MetricsError> {
    let m = exposure.len();
    if m < 2 {
        return Err(MetricsError::TooFewItems(m));
    }
    if exposure.iter().any(|x| !x.is_finite() || *x < S::zero()) {
        return Err(MetricsError::InvalidExposure);
    }
    let mut sorted = exposure.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let total: S = sorted.iter().copied().sum();
    if total <= S::zero() {
        return Err(MetricsError::NoExposure);
    }
    let mut numerator = S::zero();
    for lo in 0..m / 2 {
        let hi = m - 1 - lo;
        // 1-based rank of `hi` is m - lo, coefficient 2(m - lo) - m - 1
        let coef = S::of_usize(m - 2 * lo - 1);
        numerator = numerator + coef * (sorted[hi] - sorted[lo]);
    }
    Ok(numerator / (S::of_usize(m - 1) * total))
}

/// `1 - gini(exposure)`, where `exposure` covers every catalog item.
pub fn equality_of_exposure<S: Scalar>(exposure: &[S]) -> Result<S, MetricsError> {
    Ok(S::one() - gini(exposure)?)
}

/// Which items enter the Gini population.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GiniPopulation {
    /// Every catalog item, unexposed ones as zeros.
    #[default]
    Catalog,
    /// Only items with positive exposure.
    Recommended,
}

pub fn equality_of_exposure_over<S: Scalar>(
    exposure: &[S],
    population: GiniPopulation,
) -> Result<S, MetricsError> {
    match population {
        GiniPopulation::Catalog => equality_of_exposure(exposure),
        GiniPopulation::Recommended => {
            let shown: Vec<S> = exposure.iter().copied().filter(|x| *x > S::zero()).collect();
            if shown.is_empty() {
                return Err(MetricsError::NoExposure);
            }
            equality_of_exposure(&shown)
        }
    }
}

/// Summary of one simulated round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub ndcg: f64,
    pub agg_div: f64,
    pub cum_agg_div: f64,
    pub ee: f64,
    pub cum_ee: f64,
    pub discrepancy: f64,
    pub clicks: usize,
}

pub const ROUND_CSV_HEADER: &str = "round,ndcg,agg_div,cum_agg_div,ee,cum_ee,discrepancy,clicks";

impl RoundReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.10},{:.10},{:.10},{:.10},{:.10},{},{}",
            self.round,
            self.ndcg,
            self.agg_div,
            self.cum_agg_div,
            self.ee,
            self.cum_ee,
            self.discrepancy,
            self.clicks
        )
    }

    pub fn parse_csv_row(line: &str) -> Option<RoundReport> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return None;
        }
        Some(RoundReport {
            round: f[0].parse().ok()?,
            ndcg: f[1].parse().ok()?,
            agg_div: f[2].parse().ok()?,
            cum_agg_div: f[3].parse().ok()?,
            ee: f[4].parse().ok()?,
            cum_ee: f[5].parse().ok()?,
            discrepancy: f[6].parse().ok()?,
            clicks: f[7].parse().ok()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Interaction;
    use crate::scalar::discount_mass;

    #[test]
    fn exposure_examples() {
        let e = round_exposure::<f64>(&[vec![0]], 10, 3);
        assert_eq!(e, vec![1.0, 0.0, 0.0]);
        let e = round_exposure::<f64>(&[vec![0, 1, 2], vec![1, 2, 0]], 3, 4);
        assert!((e[0] - 1.5).abs() < 1e-15);
        assert_eq!(e[3], 0.0);
    }

    #[test]
    fn exposure_mass_is_conserved() {
        let lists: Vec<Vec<u32>> = (0..7u32).map(|u| (0..5).map(|k| (u + 3 * k) % 20).collect()).collect();
        let e = round_exposure::<f64>(&lists, 5, 20);
        let total: f64 = e.iter().sum();
        assert!((total - 7.0 * discount_mass::<f64>(5)).abs() < 1e-9);
    }

    #[test]
    fn ledger_accumulates_and_guards_duplicates() {
        let mut l = ExposureLedger::<f64>::new(2);
        l.accumulate(1, vec![1.0, 0.0]).unwrap();
        assert_eq!(l.cumulative(), &[1.0, 0.0]);
        l.accumulate(2, vec![0.5, 0.0]).unwrap();
        assert_eq!(l.cumulative(), &[1.5, 0.0]);
        assert_eq!(l.seen_count(), 1);
        assert_eq!(
            l.accumulate(2, vec![0.0, 0.0]),
            Err(MetricsError::DuplicateRound(2))
        );
        l.accumulate(3, vec![0.0, 2.0]).unwrap();
        assert_eq!(l.accumulate(3, vec![0.0, 0.0]), Err(MetricsError::DuplicateRound(3)));
        assert!(l.accumulate(4, vec![1.0]).is_err());
        assert!(l.accumulate(4, vec![-1.0, 0.0]).is_err());
        assert_eq!(l.cumulative_through(2), vec![1.5, 0.0]);
        assert_eq!(l.round_count(), 3);
    }

    #[test]
    fn ledger_binary_round_trip() {
        let mut l = ExposureLedger::<f64>::new(3);
        l.accumulate(1, vec![1.0, 0.25, 0.0]).unwrap();
        l.accumulate(2, vec![0.1, 0.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        l.write_to(&mut buf).unwrap();
        let back = ExposureLedger::<f64>::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, l);
        assert!(ExposureLedger::<f64>::read_from(&b"nope"[..]).is_err());
    }

    fn test_store(n: usize, m: usize, pairs: &[(u32, u32)]) -> InteractionStore {
        let mut s = InteractionStore::new(n, m);
        for &(u, i) in pairs {
            s.insert(Interaction::original(u, i, 1.0)).unwrap();
        }
        s
    }

    #[test]
    fn ndcg_examples() {
        let test = test_store(1, 10, &[(0, 3), (0, 4)]);
        let (v, n) = ndcg::<f64>(&[vec![3, 4, 1]], &test, 3);
        assert_eq!((v, n), (1.0, 1));
        let (v, _) = ndcg::<f64>(&[vec![1, 2, 5]], &test, 3);
        assert_eq!(v, 0.0);

        let test = test_store(1, 10, &[(0, 7)]);
        let (v, _) = ndcg::<f64>(&[vec![1, 7]], &test, 2);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((v - 0.6309).abs() < 1e-4);

        // users without test items are skipped
        let test = test_store(2, 10, &[(1, 2)]);
        let (v, n) = ndcg::<f64>(&[vec![5], vec![2]], &test, 1);
        assert_eq!((v, n), (1.0, 1));
        let (v, n) = ndcg::<f64>(&[vec![5]], &test_store(1, 10, &[]), 1);
        assert_eq!((v, n), (0.0, 0));
    }

    #[test]
    fn aggregate_diversity_examples() {
        let all: Vec<Vec<u32>> = vec![vec![0, 1], vec![2, 3]];
        assert_eq!(aggregate_diversity::<f64>(&all, 4), 1.0);
        let shared: Vec<Vec<u32>> = vec![(0..10).collect(); 5];
        assert_eq!(aggregate_diversity::<f64>(&shared, 100), 0.1);
        assert_eq!(aggregate_diversity::<f64>(&[vec![], vec![]], 100), 0.0);
    }

    #[test]
    fn cumulative_diversity_examples() {
        let mut l = ExposureLedger::<f64>::new(100);
        let r1: Vec<Vec<u32>> = vec![(0..10).collect()];
        l.accumulate(1, round_exposure(&r1, 10, 100)).unwrap();
        assert_eq!(
            cumulative_aggregate_diversity(&l, 100),
            aggregate_diversity::<f64>(&r1, 100)
        );
        let r2: Vec<Vec<u32>> = vec![(10..20).collect()];
        l.accumulate(2, round_exposure(&r2, 10, 100)).unwrap();
        assert_eq!(cumulative_aggregate_diversity(&l, 100), 0.2);
    }

    #[test]
    fn equality_of_exposure_examples() {
        assert_eq!(equality_of_exposure(&[2.5f64; 7]).unwrap(), 1.0);
        assert_eq!(equality_of_exposure(&[0.0f64, 0.0, 3.0, 0.0, 0.0]).unwrap(), 0.0);
        let ee = equality_of_exposure(&[0.0f64, 0.0, 1.0, 1.0]).unwrap();
        assert!((ee - (1.0 - 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(equality_of_exposure(&[0.0f64; 3]), Err(MetricsError::NoExposure));
        assert_eq!(equality_of_exposure(&[1.0f64]), Err(MetricsError::TooFewItems(1)));
        assert_eq!(equality_of_exposure(&[1.0f32; 4]).unwrap(), 1.0);
    }

    #[test]
    fn recommended_population_drops_zeros() {
        let x = [0.0f64, 0.0, 1.0, 1.0];
        assert_eq!(equality_of_exposure_over(&x, GiniPopulation::Recommended).unwrap(), 1.0);
        assert!(equality_of_exposure_over(&x, GiniPopulation::Catalog).unwrap() < 0.5);
    }

    #[test]
    fn csv_row_round_trip() {
        let r = RoundReport {
            round: 3,
            ndcg: 0.25,
            agg_div: 0.5,
            cum_agg_div: 0.75,
            ee: 0.125,
            cum_ee: 0.0625,
            discrepancy: 12.0,
            clicks: 9,
        };
        assert_eq!(RoundReport::parse_csv_row(&r.csv_row()), Some(r));
        assert_eq!(ROUND_CSV_HEADER.split(',').count(), 8);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mad_gini(x: &[f64]) -> f64 {
            let m = x.len() as f64;
            let total: f64 = x.iter().sum();
            let mut acc = 0.0;
            for a in x {
                for b in x {
                    acc += (a - b).abs();
                }
            }
            acc / (2.0 * (m - 1.0) * total)
        }

        proptest! {
            #[test]
            fn ee_scale_invariant(
                x in proptest::collection::vec(0u32..50, 2..30),
                c in 1u32..1000,
            ) {
                prop_assume!(x.iter().any(|&v| v > 0));
                let a: Vec<f64> = x.iter().map(|&v| v as f64).collect();
                // powers of two keep scaling exact in binary floating point
                let scale = (2.0f64).powi((c % 20) as i32);
                let b: Vec<f64> = a.iter().map(|v| v * scale).collect();
                prop_assert_eq!(equality_of_exposure(&a).unwrap(), equality_of_exposure(&b).unwrap());
                let c = c as f64;
                let b: Vec<f64> = a.iter().map(|v| v * c).collect();
                prop_assert!((equality_of_exposure(&a).unwrap() - equality_of_exposure(&b).unwrap()).abs() < 1e-12);
            }

            #[test]
            fn gini_matches_mean_absolute_difference(
                x in proptest::collection::vec(0.0f64..10.0, 2..40),
            ) {
                prop_assume!(x.iter().sum::<f64>() > 1e-6);
                prop_assert!((gini(&x).unwrap() - mad_gini(&x)).abs() < 1e-9);
            }

            #[test]
            fn pigou_dalton_transfer_lowers_ee(
                x in proptest::collection::vec(0.0f64..10.0, 3..20),
                pick in any::<(usize, usize)>(),
                frac in 0.05f64..0.95,
            ) {
                let (i, j) = (pick.0 % x.len(), pick.1 % x.len());
                prop_assume!(x[i] > 1e-3 && x[i] <= x[j] && i != j);
                let mut y = x.clone();
                let delta = x[i] * frac;
                y[i] -= delta;
                y[j] += delta;
                prop_assert!(mad_gini(&y) > mad_gini(&x));
                prop_assert!(equality_of_exposure(&y).unwrap() < equality_of_exposure(&x).unwrap());
            }
        }
    }
}
