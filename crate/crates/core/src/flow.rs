//! Integer min-cost flow.
//!
//! Successive shortest paths with node potentials. Initial potentials come
//! from a Bellman-Ford pass so negative arc costs are accepted as long as the
//! network has no negative-cost cycle. After every Dijkstra round all shortest
//! augmenting paths are saturated at once with a blocking flow over the arcs of
//! zero reduced cost, which keeps the number of Dijkstra calls proportional to
//! the number of distinct path lengths rather than to the flow value.
//!
//! Adjacency is scanned in arc insertion order, so equal-cost optima are
//! reproducible.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;
pub type ArcId = usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlowError {
    #[error("node {node} out of range for a network of {node_count} nodes")]
    NodeOutOfRange { node: NodeId, node_count: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("negative capacity {0}")]
    NegativeCapacity(i64),
    #[error("source and sink must differ")]
    SourceIsSink,
    #[error("required flow must be nonnegative, got {0}")]
    NegativeRequirement(i64),
    #[error("infeasible: required flow {required} exceeds maximum flow {max_flow}")]
    Infeasible { required: i64, max_flow: i64 },
    #[error("residual network contains a negative-cost cycle")]
    NegativeCycle,
    #[error("capacity x cost exceeds the integer range")]
    Overflow,
    #[error("dimacs line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arc {
    pub from: NodeId,
    pub to: NodeId,
    pub capacity: i64,
    pub cost: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowNetwork {
    node_count: usize,
    arcs: Vec<Arc>,
    source: NodeId,
    sink: NodeId,
}

impl FlowNetwork {
    pub fn new(node_count: usize, source: NodeId, sink: NodeId) -> Result<Self, FlowError> {
        for node in [source, sink] {
            if node >= node_count {
                return Err(FlowError::NodeOutOfRange { node, node_count });
            }
        }
        if source == sink {
            return Err(FlowError::SourceIsSink);
        }
        Ok(FlowNetwork {
            node_count,
            arcs: Vec::new(),
            source,
            sink,
        })
    }

    pub fn add_arc(
        &mut self,
        from: NodeId,
        to: NodeId,
        capacity: i64,
        cost: i64,
    ) -> Result<ArcId, FlowError> {
        for node in [from, to] {
            if node >= self.node_count {
                return Err(FlowError::NodeOutOfRange {
                    node,
                    node_count: self.node_count,
                });
            }
        }
        if from == to {
            return Err(FlowError::SelfLoop(from));
        }
        if capacity < 0 {
            return Err(FlowError::NegativeCapacity(capacity));
        }
        self.arcs.push(Arc {
            from,
            to,
            capacity,
            cost,
        });
        Ok(self.arcs.len() - 1)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn source(&self) -> NodeId {
        self.source
    }

    pub fn sink(&self) -> NodeId {
        self.sink
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowSolution {
    pub arc_flows: Vec<i64>,
    pub total_cost: i64,
    pub flow_value: i64,
}

impl FlowSolution {
    /// Checks capacity bounds, conservation and the cost identity against `net`.
    pub fn verify(&self, net: &FlowNetwork) -> Result<(), String> {
        if self.arc_flows.len() != net.arcs.len() {
            return Err("arc count mismatch".into());
        }
        let mut balance = vec![0i64; net.node_count];
        let mut cost = 0i64;
        for (k, (arc, &f)) in net.arcs.iter().zip(&self.arc_flows).enumerate() {
            if f < 0 || f > arc.capacity {
                return Err(format!("arc {k}: flow {f} outside [0, {}]", arc.capacity));
            }
            balance[arc.from] -= f;
            balance[arc.to] += f;
            cost += f * arc.cost;
        }
        for (v, &b) in balance.iter().enumerate() {
            let expected = if v == net.source {
                -self.flow_value
            } else if v == net.sink {
                self.flow_value
            } else {
                0
            };
            if b != expected {
                return Err(format!("node {v}: imbalance {b}, expected {expected}"));
            }
        }
        if cost != self.total_cost {
            return Err(format!("cost {cost} != reported {}", self.total_cost));
        }
        Ok(())
    }
}

/// Residual graph in compressed adjacency form; edge `2k` is arc `k`, `2k+1` its reverse.
struct Residual {
    start: Vec<usize>,
    order: Vec<usize>,
    to: Vec<NodeId>,
    cap: Vec<i64>,
    cost: Vec<i64>,
}

impl Residual {
    fn new(net: &FlowNetwork) -> Self {
        let e = net.arcs.len() * 2;
        let mut to = Vec::with_capacity(e);
        let mut cap = Vec::with_capacity(e);
        let mut cost = Vec::with_capacity(e);
        let mut tail = Vec::with_capacity(e);
        for arc in &net.arcs {
            to.extend([arc.to, arc.from]);
            cap.extend([arc.capacity, 0]);
            cost.extend([arc.cost, -arc.cost]);
            tail.extend([arc.from, arc.to]);
        }
        let mut start = vec![0usize; net.node_count + 1];
        for &u in &tail {
            start[u + 1] += 1;
        }
        for v in 0..net.node_count {
            start[v + 1] += start[v];
        }
        let mut fill = start.clone();
        let mut order = vec![0usize; e];
        for (edge, &u) in tail.iter().enumerate() {
            order[fill[u]] = edge;
            fill[u] += 1;
        }
        Residual {
            start,
            order,
            to,
            cap,
            cost,
        }
    }

    #[inline]
    fn edges(&self, u: NodeId) -> &[usize] {
        &self.order[self.start[u]..self.start[u + 1]]
    }

    fn push(&mut self, edge: usize, amount: i64) {
        self.cap[edge] -= amount;
        self.cap[edge ^ 1] += amount;
    }

    /// Dinic blocking flows restricted to edges accepted by `admissible`, up to `limit` units.
    fn blocking_flows(
        &mut self,
        s: NodeId,
        t: NodeId,
        limit: i64,
        admissible: impl Fn(&Residual, NodeId, usize) -> bool,
    ) -> i64 {
        let n = self.start.len() - 1;
        let mut pushed = 0i64;
        let mut level = vec![usize::MAX; n];
        let mut iter = vec![0usize; n];
        let mut queue = VecDeque::new();
        while pushed < limit {
            level.fill(usize::MAX);
            level[s] = 0;
            queue.clear();
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for &e in self.edges(u) {
                    let v = self.to[e];
                    if level[v] == usize::MAX && self.cap[e] > 0 && admissible(self, u, e) {
                        level[v] = level[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            if level[t] == usize::MAX {
                break;
            }
            iter.copy_from_slice(&self.start[..n]);
            // iterative DFS; `path` holds the edges from s to the current node
            let mut path: Vec<usize> = Vec::new();
            let mut u = s;
            while pushed < limit {
                if u == t {
                    let mut amount = limit - pushed;
                    for &e in &path {
                        amount = amount.min(self.cap[e]);
                    }
                    let mut back_to = path.len();
                    for (k, &e) in path.iter().enumerate() {
                        self.push(e, amount);
                        if self.cap[e] == 0 && back_to == path.len() {
                            back_to = k;
                        }
                    }
                    pushed += amount;
                    path.truncate(back_to);
                    u = path.last().map_or(s, |&e| self.to[e]);
                    continue;
                }
                let mut advanced = false;
                while iter[u] < self.start[u + 1] {
                    let e = self.order[iter[u]];
                    let v = self.to[e];
                    if self.cap[e] > 0 && level[v] == level[u] + 1 && admissible(self, u, e) {
                        path.push(e);
                        u = v;
                        advanced = true;
                        break;
                    }
                    iter[u] += 1;
                }
                if !advanced {
                    if u == s {
                        break;
                    }
                    level[u] = usize::MAX;
                    path.pop();
                    u = path.last().map_or(s, |&e| self.to[e]);
                    iter[u] += 1;
                }
            }
        }
        pushed
    }
}

fn check_cost_range(net: &FlowNetwork) -> Result<(), FlowError> {
    let mut acc: i64 = 0;
    for arc in &net.arcs {
        let term = arc
            .capacity
            .checked_mul(arc.cost.checked_abs().ok_or(FlowError::Overflow)?)
            .ok_or(FlowError::Overflow)?;
        acc = acc.checked_add(term).ok_or(FlowError::Overflow)?;
    }
    // potentials are bounded by path lengths, which need headroom for reduced costs
    acc.checked_mul(4).ok_or(FlowError::Overflow)?;
    Ok(())
}

/// Bellman-Ford (queue based) from the source over arcs with positive capacity.
fn initial_potentials(net: &FlowNetwork, res: &Residual) -> Result<Vec<i64>, FlowError> {
    let n = net.node_count;
    let mut pot = vec![0i64; n];
    if net.arcs.iter().all(|a| a.cost >= 0) {
        return Ok(pot);
    }
    let mut dist = vec![i64::MAX; n];
    let mut in_queue = vec![false; n];
    // edges on the current shortest path; n or more means a negative cycle
    let mut hops = vec![0usize; n];
    let mut queue = VecDeque::new();
    dist[net.source] = 0;
    queue.push_back(net.source);
    in_queue[net.source] = true;
    while let Some(u) = queue.pop_front() {
        in_queue[u] = false;
        for &e in res.edges(u) {
            if res.cap[e] <= 0 {
                continue;
            }
            let v = res.to[e];
            let nd = dist[u] + res.cost[e];
            if nd < dist[v] {
                dist[v] = nd;
                hops[v] = hops[u] + 1;
                if hops[v] >= n {
                    return Err(FlowError::NegativeCycle);
                }
                if !in_queue[v] {
                    in_queue[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    for v in 0..n {
        if dist[v] != i64::MAX {
            pot[v] = dist[v];
        }
    }
    Ok(pot)
}

/// Dijkstra over reduced costs; returns distances (`i64::MAX` when unreachable).
fn reduced_dijkstra(res: &Residual, pot: &[i64], s: NodeId, dist: &mut [i64]) {
    dist.fill(i64::MAX);
    dist[s] = 0;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0i64, s)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &e in res.edges(u) {
            if res.cap[e] <= 0 {
                continue;
            }
            let v = res.to[e];
            let nd = d + res.cost[e] + pot[u] - pot[v];
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((nd, v)));
            }
        }
    }
}

/// Minimum-cost flow of exactly `required_flow` units from source to sink.
pub fn min_cost_flow(net: &FlowNetwork, required_flow: i64) -> Result<FlowSolution, FlowError> {
    if required_flow < 0 {
        return Err(FlowError::NegativeRequirement(required_flow));
    }
    check_cost_range(net)?;
    let mut res = Residual::new(net);
    let mut pot = initial_potentials(net, &res)?;
    let (s, t) = (net.source, net.sink);
    let mut dist = vec![0i64; net.node_count];
    let mut flow = 0i64;
    while flow < required_flow {
        reduced_dijkstra(&res, &pot, s, &mut dist);
        let dt = dist[t];
        if dt == i64::MAX {
            break;
        }
        for (p, &d) in pot.iter_mut().zip(dist.iter()) {
            *p += d.min(dt);
        }
        let pushed = res.blocking_flows(s, t, required_flow - flow, |r, u, e| {
            r.cost[e] + pot[u] - pot[r.to[e]] == 0
        });
        debug_assert!(pushed > 0, "shortest path found but nothing pushed");
        if pushed == 0 {
            break;
        }
        flow += pushed;
    }
    if flow < required_flow {
        return Err(FlowError::Infeasible {
            required: required_flow,
            max_flow: max_flow_value(net),
        });
    }
    let arc_flows: Vec<i64> = net
        .arcs
        .iter()
        .enumerate()
        .map(|(k, arc)| arc.capacity - res.cap[2 * k])
        .collect();
    let total_cost = net
        .arcs
        .iter()
        .zip(&arc_flows)
        .map(|(a, &f)| a.cost * f)
        .sum();
    Ok(FlowSolution {
        arc_flows,
        total_cost,
        flow_value: flow,
    })
}

/// Value of a maximum source-sink flow, ignoring costs.
pub fn max_flow_value(net: &FlowNetwork) -> i64 {
    let mut res = Residual::new(net);
    res.blocking_flows(net.source, net.sink, i64::MAX, |_, _, _| true)
}

/// Writes the network in DIMACS min-cost-flow form (1-based node ids).
///
/// ```text
/// p min <nodes> <arcs>
/// n <source> <required>
/// n <sink> <-required>
/// a <from> <to> 0 <capacity> <cost>
/// ```
pub fn write_dimacs<W: Write>(net: &FlowNetwork, required_flow: i64, mut w: W) -> io::Result<()> {
    writeln!(w, "c exposim flow network")?;
    writeln!(w, "p min {} {}", net.node_count, net.arcs.len())?;
    writeln!(w, "n {} {}", net.source + 1, required_flow)?;
    writeln!(w, "n {} {}", net.sink + 1, -required_flow)?;
    for a in &net.arcs {
        writeln!(w, "a {} {} 0 {} {}", a.from + 1, a.to + 1, a.capacity, a.cost)?;
    }
    Ok(())
}

/// Writes a solution as `s <cost>` followed by one `f <from> <to> <flow>` line per arc.
pub fn write_dimacs_solution<W: Write>(
    net: &FlowNetwork,
    sol: &FlowSolution,
    mut w: W,
) -> io::Result<()> {
    writeln!(w, "s {}", sol.total_cost)?;
    for (a, f) in net.arcs.iter().zip(&sol.arc_flows) {
        writeln!(w, "f {} {} {}", a.from + 1, a.to + 1, f)?;
    }
    Ok(())
}

/// Parses the format produced by [`write_dimacs`], returning the network and required flow.
///
/// The first `n` line names the source and its supply, the second the sink.
pub fn read_dimacs<R: BufRead>(r: R) -> Result<(FlowNetwork, i64), FlowError> {
    let mut node_count: Option<usize> = None;
    let mut supplies: Vec<(usize, i64)> = Vec::new();
    let mut arcs: Vec<(usize, Arc)> = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let lineno = idx + 1;
        let err = |reason: &str| FlowError::Parse {
            line: lineno,
            reason: reason.to_owned(),
        };
        let line = line.map_err(|e| err(&e.to_string()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |k: usize| -> Result<i64, FlowError> {
            fields
                .get(k)
                .ok_or_else(|| err("missing field"))?
                .parse::<i64>()
                .map_err(|_| err("bad integer"))
        };
        let node = |k: usize| -> Result<usize, FlowError> {
            let v = num(k)?;
            if v < 1 {
                return Err(err("node ids are 1-based"));
            }
            Ok(v as usize - 1)
        };
        match fields.first().copied() {
            None | Some("c") => {}
            Some("p") => {
                if fields.get(1) != Some(&"min") {
                    return Err(err("expected 'p min'"));
                }
                node_count = Some(num(2)? as usize);
            }
            Some("n") => supplies.push((node(1)?, num(2)?)),
            Some("a") => {
                if num(3)? != 0 {
                    return Err(err("lower bounds are not supported"));
                }
                let arc = Arc {
                    from: node(1)?,
                    to: node(2)?,
                    capacity: num(4)?,
                    cost: num(5)?,
                };
                arcs.push((lineno, arc));
            }
            Some(_) => return Err(err("unknown line type")),
        }
    }
    let missing = |reason: &str| FlowError::Parse {
        line: 0,
        reason: reason.to_owned(),
    };
    let node_count = node_count.ok_or_else(|| missing("missing problem line"))?;
    let (source, required) = *supplies.first().ok_or_else(|| missing("missing source line"))?;
    let (sink, _) = *supplies.get(1).ok_or_else(|| missing("missing sink line"))?;
    let mut net = FlowNetwork::new(node_count, source, sink)?;
    for (lineno, a) in arcs {
        net.add_arc(a.from, a.to, a.capacity, a.cost)
            .map_err(|e| FlowError::Parse {
                line: lineno,
                reason: e.to_string(),
            })?;
    }
    Ok((net, required))
}
