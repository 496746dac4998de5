//! Exhaustive-search oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use exposim::dataset::ItemId;
use exposim::flow::FlowNetwork;
use exposim::rerank::{discrepancy, rank_cost, TargetVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Every feasible flow, grouped by value: `best[v] = min cost of a flow of value v`.
pub struct Brute<'a> {
    net: &'a FlowNetwork,
    last_touch: Vec<usize>,
    balance: Vec<i64>,
    best: Vec<Option<i64>>,
}

impl Brute<'_> {
    pub fn run(net: &FlowNetwork) -> Vec<Option<i64>> {
        let arcs = net.arcs();
        let mut last_touch = vec![usize::MAX; net.node_count()];
        for (k, a) in arcs.iter().enumerate() {
            last_touch[a.from] = k;
            last_touch[a.to] = k;
        }
        let cap_out: i64 = arcs.iter().filter(|a| a.from == net.source()).map(|a| a.capacity).sum();
        let mut b = Brute {
            net,
            last_touch,
            balance: vec![0; net.node_count()],
            best: vec![None; cap_out as usize + 1],
        };
        b.go(0, 0);
        b.best
    }

    fn go(&mut self, k: usize, cost: i64) {
        let arcs = self.net.arcs();
        if k == arcs.len() {
            let v = -self.balance[self.net.source()];
            if v >= 0 && self.balance[self.net.sink()] == v {
                let slot = &mut self.best[v as usize];
                *slot = Some(slot.map_or(cost, |c: i64| c.min(cost)));
            }
            return;
        }
        let a = arcs[k];
        for f in 0..=a.capacity {
            self.balance[a.from] -= f;
            self.balance[a.to] += f;
            let ok = [a.from, a.to].iter().all(|&x| {
                x == self.net.source() || x == self.net.sink() || self.last_touch[x] != k || self.balance[x] == 0
            });
            if ok {
                self.go(k + 1, cost + f * a.cost);
            }
            self.balance[a.from] += f;
            self.balance[a.to] -= f;
        }
    }
}

pub fn random_network(rng: &mut ChaCha8Rng, dag_negative: bool) -> FlowNetwork {
    let n = rng.random_range(2..=6);
    let (s, t) = if dag_negative { (0, n - 1) } else { (rng.random_range(0..n), rng.random_range(0..n)) };
    let t = if t == s { (s + 1) % n } else { t };
    let mut net = FlowNetwork::new(n, s, t).unwrap();
    let arcs = rng.random_range(0..=10);
    for _ in 0..arcs {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let (from, to) = if dag_negative { (a.min(b), a.max(b)) } else { (a, b) };
        let cost = if dag_negative { rng.random_range(-4..=9) } else { rng.random_range(0..=9) };
        net.add_arc(from, to, rng.random_range(0..=3), cost).unwrap();
    }
    net
}

pub fn subsets(list: &[ItemId], k: usize) -> Vec<Vec<ItemId>> {
    if k == 0 {
        return vec![vec![]];
    }
    if list.len() < k {
        return vec![];
    }
    let mut out = Vec::new();
    for mut rest in subsets(&list[1..], k - 1) {
        rest.insert(0, list[0]);
        out.push(rest);
    }
    out.extend(subsets(&list[1..], k));
    out
}

/// Lexicographic optimum `(discrepancy, rank cost)` over all selections.
pub fn brute_rerank(long: &[Vec<ItemId>], targets: &TargetVector, k: usize) -> (i64, i64) {
    let choices: Vec<Vec<Vec<ItemId>>> = long.iter().map(|l| subsets(l, k.min(l.len()))).collect();
    let mut best = (i64::MAX, i64::MAX);
    let mut pick = vec![0usize; long.len()];
    loop {
        let lists: Vec<Vec<ItemId>> = pick.iter().zip(&choices).map(|(&p, c)| c[p].clone()).collect();
        let key = (discrepancy(&lists, targets).total, rank_cost(long, &lists));
        best = best.min(key);
        let mut u = 0;
        while u < pick.len() {
            pick[u] += 1;
            if pick[u] < choices[u].len() {
                break;
            }
            pick[u] = 0;
            u += 1;
        }
        if u == pick.len() {
            return best;
        }
    }
}


/// Mean-absolute-difference Gini with the `m - 1` normalization.
pub fn mad_gini(x: &[f64]) -> f64 {
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
