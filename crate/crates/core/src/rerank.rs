//! Discrepancy-minimizing reranking over long candidate lists.
//!
//! Each item gets an integer target number of recommendation slots. Choosing
//! `K` of every user's `L` candidates is cast as a min-cost flow:
//!
//! ```text
//! source --(K, 0)--> user --(1, rank)--> item --(C(i), 0)----> sink
//!                                             \--(n*K, lambda)-> sink
//! ```
//!
//! Slots beyond an item's target must use the overflow arc. With `lambda`
//! larger than any possible total rank cost, the solver first minimizes the
//! number of over-target assignments and then, among those, the summed
//! long-list ranks.
//!
//! Only over-target assignment is priced. Under-target shortfall is not priced
//! directly, but because every slot has to go somewhere, leaving cheap target
//! capacity unused forces the same slot onto some other item's overflow arc.
//! Since the total number of slots is fixed, minimizing overflow also minimizes
//! `sum_i |deg(i) - C(i)|`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ItemId, UserId};
use crate::flow::{min_cost_flow, ArcId, FlowError, FlowNetwork};
use crate::metrics::ExposureLedger;
use crate::scalar::{position_weight, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum RerankError {
    #[error("final list length K must be positive")]
    ZeroK,
    #[error("K = {k} exceeds long list length L = {l}")]
    KExceedsL { k: usize, l: usize },
    #[error("long lists contain no items")]
    NoCandidates,
    #[error("dynamic targets need round >= 1")]
    RoundZero,
    #[error("discrepancy weight {weight} must exceed the maximum total rank cost {bound}")]
    WeightTooSmall { weight: i64, bound: i64 },
    #[error("epsilon must be positive and finite")]
    InvalidEpsilon,
    #[error("flow solver: {0}")]
    Flow(#[from] FlowError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    Static,
    DynamicLiteral,
    DynamicNormalized,
    /// Normalized, but no item is targeted beyond a fraction of the long lists it appears in.
    #[default]
    DynamicCapped,
}

/// Per-item slot targets; `listed` marks the items present in the long lists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetVector {
    pub targets: Vec<i64>,
    pub listed: Vec<bool>,
    pub mode: TargetMode,
}

impl TargetVector {
    pub fn get(&self, item: ItemId) -> i64 {
        self.targets[item as usize]
    }

    pub fn total(&self) -> i64 {
        self.targets.iter().sum()
    }

    pub fn listed_count(&self) -> usize {
        self.listed.iter().filter(|&&b| b).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankConfig {
    pub k: usize,
    pub l: usize,
    /// Overflow arc cost; `None` derives `n*K*L + 1` from the active user count.
    pub discrepancy_weight: Option<i64>,
    pub target_mode: TargetMode,
    /// Zero-exposure guard; `None` means `1 / log2(1 + K)`.
    pub epsilon: Option<f64>,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            k: 10,
            l: 40,
            discrepancy_weight: None,
            target_mode: TargetMode::DynamicCapped,
            epsilon: None,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<(), RerankError> {
        if self.k == 0 {
            return Err(RerankError::ZeroK);
        }
        if self.k > self.l {
            return Err(RerankError::KExceedsL {
                k: self.k,
                l: self.l,
            });
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(RerankError::InvalidEpsilon);
            }
        }
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
            .unwrap_or_else(|| position_weight::<f64>(self.k.max(1)))
    }

    /// Overflow weight for `active_users` network users. A user-supplied weight
    /// must exceed `active_users * K * L`, the largest total rank cost.
    pub fn overflow_weight(&self, active_users: usize) -> Result<i64, RerankError> {
        let bound = (active_users * self.k * self.l) as i64;
        match self.discrepancy_weight {
            None => Ok(bound + 1),
            Some(w) if w > bound => Ok(w),
            Some(weight) => Err(RerankError::WeightTooSmall { weight, bound }),
        }
    }
}

/// Equal split of all `n_active * K` slots over the distinct listed items, floored.
pub fn static_targets(
    long_lists: &[Vec<ItemId>],
    k: usize,
    m: usize,
) -> Result<TargetVector, RerankError> {
    if k == 0 {
        return Err(RerankError::ZeroK);
    }
    let mut listed = vec![false; m];
    for &i in long_lists.iter().flatten() {
        listed[i as usize] = true;
    }
    let distinct = listed.iter().filter(|&&b| b).count();
    if distinct == 0 {
        return Err(RerankError::NoCandidates);
    }
    let active = long_lists.iter().filter(|l| !l.is_empty()).count();
    let share = ((active * k) / distinct) as i64;
    let targets = listed.iter().map(|&b| if b { share } else { 0 }).collect();
    Ok(TargetVector {
        targets,
        listed,
        mode: TargetMode::Static,
    })
}

fn inverse_exposure_weights<S: Scalar>(static_targets: &TargetVector, cum: &[S], epsilon: S) -> Vec<f64> {
    (0..static_targets.listed.len())
        .map(|i| {
            if static_targets.listed[i] {
                (S::of(static_targets.targets[i] as f64) / cum[i].max(epsilon)).as_f64()
            } else {
                0.0
            }
        })
        .collect()
}

/// Splits `budget` integer slots proportionally to `weights`, never giving an
/// item more than its cap. Items whose proportional share would exceed the cap
/// are pinned to it and the rest is re-split among the others; the flooring
/// deficit goes one unit at a time by descending weight (ties by index).
/// Items with zero weight get nothing, so the sum can fall short of `budget`
/// only when the positive-weight caps are exhausted.
pub fn water_fill(weights: &[f64], caps: &[i64], budget: i64) -> Vec<i64> {
    let mut out = vec![0i64; weights.len()];
    let mut free: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0 && caps[i] > 0).collect();
    let mut left = budget;
    loop {
        let total: f64 = free.iter().map(|&i| weights[i]).sum();
        if free.is_empty() || left <= 0 || total <= 0.0 {
            break;
        }
        let scale = left as f64 / total;
        let (pinned, rest): (Vec<usize>, Vec<usize>) =
            free.iter().partition(|&&i| weights[i] * scale >= caps[i] as f64);
        if pinned.is_empty() {
            for &i in &free {
                out[i] = (weights[i] * scale).floor() as i64;
            }
            break;
        }
        for &i in &pinned {
            out[i] = caps[i];
            left -= caps[i];
        }
        free = rest;
    }
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut sum: i64 = out.iter().sum();
    while sum < budget {
        let before = sum;
        for &i in &order {
            if sum == budget {
                break;
            }
            if out[i] < caps[i] {
                out[i] += 1;
                sum += 1;
            }
        }
        if sum == before {
            break;
        }
    }
    out
}

/// Per-item target caps: `ceil(fraction * listings)`, where `listings` is the
/// number of long lists the item appears in.
///
/// With `fraction = 1` every low-exposure item is pinned to all of its
/// listings, and users whose candidates are mostly such items cannot honor
/// them all; a little slack lets the reranker meet every target.
pub fn listing_caps(long_lists: &[Vec<ItemId>], m: usize, fraction: f64) -> Vec<i64> {
    degrees(long_lists, m)
        .into_iter()
        .map(|c| (c as f64 * fraction).ceil() as i64)
        .collect()
}

/// Rescales static targets by inverse cumulative exposure.
///
/// Literal mode floors `C(i) / E(i)` directly. Normalized mode distributes the
/// `n * K` slot budget proportionally to `C(i) / max(E(i), epsilon)` and tops
/// up the flooring deficit by descending ratio. Capped mode behaves like
/// normalized here; use [`dynamic_targets_capped`] to supply the caps. With no
/// recorded exposure every mode returns the static targets unchanged.
pub fn dynamic_targets<S: Scalar>(
    static_targets: &TargetVector,
    ledger: &ExposureLedger<S>,
    round: u32,
    mode: TargetMode,
    epsilon: S,
    n: usize,
    k: usize,
) -> Result<TargetVector, RerankError> {
    if round == 0 {
        return Err(RerankError::RoundZero);
    }
    if !(epsilon > S::zero() && epsilon.is_finite()) {
        return Err(RerankError::InvalidEpsilon);
    }
    let cold = ledger.is_empty() || ledger.cumulative().iter().all(|x| *x == S::zero());
    if cold || mode == TargetMode::Static {
        return Ok(TargetVector {
            mode,
            ..static_targets.clone()
        });
    }
    let cum = ledger.cumulative();
    let listed = &static_targets.listed;
    let mut targets = vec![0i64; listed.len()];
    match mode {
        TargetMode::DynamicLiteral => {
            for (i, t) in targets.iter_mut().enumerate() {
                if listed[i] {
                    let e = if cum[i] > S::zero() { cum[i] } else { epsilon };
                    let base = S::of(static_targets.targets[i] as f64);
                    *t = (base / e).floor().to_i64().unwrap_or(i64::MAX);
                }
            }
        }
        TargetMode::DynamicNormalized | TargetMode::DynamicCapped => {
            let raw = inverse_exposure_weights(static_targets, cum, epsilon);
            let caps = vec![i64::MAX; raw.len()];
            targets = water_fill(&raw, &caps, (n * k) as i64);
        }
        TargetMode::Static => unreachable!(),
    }
    Ok(TargetVector {
        targets,
        listed: listed.clone(),
        mode,
    })
}

/// Normalized dynamic targets with each item capped at `caps[i]` (see
/// [`listing_caps`]), so the slot budget lands on items that can absorb it.
pub fn dynamic_targets_capped<S: Scalar>(
    static_targets: &TargetVector,
    ledger: &ExposureLedger<S>,
    round: u32,
    epsilon: S,
    caps: &[i64],
    n: usize,
    k: usize,
) -> Result<TargetVector, RerankError> {
    let mode = TargetMode::DynamicCapped;
    let mut out = dynamic_targets(static_targets, ledger, round, mode, epsilon, n, k)?;
    if ledger.is_empty() || ledger.cumulative().iter().all(|x| *x == S::zero()) {
        return Ok(out);
    }
    let raw = inverse_exposure_weights(static_targets, ledger.cumulative(), epsilon);
    out.targets = water_fill(&raw, caps, (n * k) as i64);
    Ok(out)
}

/// The flow network for one reranking problem, plus the bookkeeping needed to
/// read selections back out of a solution.
#[derive(Clone, Debug)]
pub struct RerankNetwork {
    pub network: FlowNetwork,
    pub required_flow: i64,
    pub overflow_weight: i64,
    /// For every network user, its `(arc, item)` candidates in long-list order.
    pub user_arcs: Vec<(UserId, Vec<(ArcId, ItemId)>)>,
    /// Users with `0 < |list| < K`; they keep their whole list.
    pub short_users: Vec<UserId>,
    /// Targets after subtracting the slots already taken by short users.
    pub effective_targets: Vec<i64>,
}

pub fn build_network(
    long_lists: &[Vec<ItemId>],
    targets: &TargetVector,
    cfg: &RerankConfig,
) -> Result<RerankNetwork, RerankError> {
    let k = cfg.k;
    let m = targets.targets.len();
    let mut effective = targets.targets.clone();
    let mut short_users = Vec::new();
    let mut net_users = Vec::new();
    for (u, list) in long_lists.iter().enumerate() {
        if list.is_empty() || k == 0 {
            continue;
        }
        if list.len() < k {
            short_users.push(u as UserId);
            for &i in list {
                effective[i as usize] = (effective[i as usize] - 1).max(0);
            }
        } else {
            net_users.push(u as UserId);
        }
    }

    let mut item_node = vec![usize::MAX; m];
    let mut items = Vec::new();
    for &u in &net_users {
        for &i in &long_lists[u as usize] {
            if item_node[i as usize] == usize::MAX {
                item_node[i as usize] = 0;
                items.push(i);
            }
        }
    }
    items.sort_unstable();
    let first_item = 1 + net_users.len();
    for (pos, &i) in items.iter().enumerate() {
        item_node[i as usize] = first_item + pos;
    }
    let sink = first_item + items.len();
    let source = 0;
    let mut network = FlowNetwork::new(sink + 1, source, sink)?;
    let overflow_weight = cfg.overflow_weight(net_users.len())?;
    let slots = (net_users.len() * k) as i64;

    for (pos, _) in net_users.iter().enumerate() {
        network.add_arc(source, 1 + pos, k as i64, 0)?;
    }
    let mut user_arcs = Vec::with_capacity(net_users.len());
    for (pos, &u) in net_users.iter().enumerate() {
        let mut arcs = Vec::with_capacity(long_lists[u as usize].len());
        for (rank0, &i) in long_lists[u as usize].iter().enumerate() {
            let arc = network.add_arc(1 + pos, item_node[i as usize], 1, rank0 as i64 + 1)?;
            arcs.push((arc, i));
        }
        user_arcs.push((u, arcs));
    }
    for &i in &items {
        let node = item_node[i as usize];
        network.add_arc(node, sink, effective[i as usize].max(0), 0)?;
        network.add_arc(node, sink, slots, overflow_weight)?;
    }
    Ok(RerankNetwork {
        network,
        required_flow: slots,
        overflow_weight,
        user_arcs,
        short_users,
        effective_targets: effective,
    })
}

/// Per-item comparison of achieved slot counts against targets.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscrepancyBreakdown {
    /// `sum_i |deg(i) - C(i)|`
    pub total: i64,
    /// `sum_i max(0, deg(i) - C(i))`
    pub overflow_units: i64,
    /// `sum_i max(0, C(i) - deg(i))`
    pub shortfall_units: i64,
    pub items_over: usize,
    pub items_under: usize,
    pub items_on_target: usize,
}

/// Number of final lists each item appears in.
pub fn degrees(lists: &[Vec<ItemId>], m: usize) -> Vec<i64> {
    let mut deg = vec![0i64; m];
    for &i in lists.iter().flatten() {
        deg[i as usize] += 1;
    }
    deg
}

pub fn discrepancy(lists: &[Vec<ItemId>], targets: &TargetVector) -> DiscrepancyBreakdown {
    let deg = degrees(lists, targets.targets.len());
    let mut b = DiscrepancyBreakdown::default();
    for (i, (&d, &c)) in deg.iter().zip(&targets.targets).enumerate() {
        let diff = d - c;
        b.total += diff.abs();
        if diff > 0 {
            b.overflow_units += diff;
            b.items_over += 1;
        } else if diff < 0 {
            b.shortfall_units -= diff;
            b.items_under += 1;
        } else if targets.listed[i] || d > 0 {
            b.items_on_target += 1;
        }
    }
    b
}

/// Total long-list rank (1-based) of the selected items.
pub fn rank_cost(long_lists: &[Vec<ItemId>], lists: &[Vec<ItemId>]) -> i64 {
    long_lists
        .iter()
        .zip(lists)
        .map(|(long, fin)| {
            fin.iter()
                .map(|i| long.iter().position(|x| x == i).map_or(0, |p| p as i64 + 1))
                .sum::<i64>()
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RerankOutcome {
    pub lists: Vec<Vec<ItemId>>,
    pub flow_cost: i64,
    pub overflow_weight: i64,
}

/// Selects `K` items per user minimizing over-target assignment, then rank cost.
/// Final lists keep long-list order.
pub fn rerank(
    long_lists: &[Vec<ItemId>],
    targets: &TargetVector,
    cfg: &RerankConfig,
) -> Result<RerankOutcome, RerankError> {
    let built = build_network(long_lists, targets, cfg)?;
    let solution = min_cost_flow(&built.network, built.required_flow)?;
    let mut lists = vec![Vec::new(); long_lists.len()];
    for &u in &built.short_users {
        lists[u as usize] = long_lists[u as usize].clone();
    }
    for (u, arcs) in &built.user_arcs {
        lists[*u as usize] = arcs
            .iter()
            .filter(|(arc, _)| solution.arc_flows[*arc] == 1)
            .map(|&(_, i)| i)
            .collect();
    }
    Ok(RerankOutcome {
        lists,
        flow_cost: solution.total_cost,
        overflow_weight: built.overflow_weight,
    })
}

/// First `k` entries of every list.
pub fn top_k(long_lists: &[Vec<ItemId>], k: usize) -> Vec<Vec<ItemId>> {
    long_lists
        .iter()
        .map(|l| l.iter().take(k).copied().collect())
        .collect()
}
