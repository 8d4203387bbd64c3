//! Min-cost flow with lower/upper bounds and arbitrary integer costs.
//!
//! Negative-cost edges are saturated up front and lower bounds are moved
//! into node imbalances, leaving a supply/demand problem with non-negative
//! residual costs. That problem is solved by the primal-dual method:
//! Dijkstra on reduced costs to update node potentials, then a blocking
//! flow on the zero-reduced-cost subgraph. The final potentials are optimal
//! duals; [`FlowSolution::reduced_costs`] exposes them so callers can
//! restrict a network to its optimal face.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowEdge {
    pub from: usize,
    pub to: usize,
    pub lower: i64,
    pub upper: i64,
}

/// Network topology plus per-edge bounds. Costs are passed per solve.
#[derive(Debug, Clone, Default)]
pub struct FlowNetwork {
    pub n_nodes: usize,
    pub edges: Vec<FlowEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Infeasible;

#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub flow: Vec<i64>,
    pub potential: Vec<i64>,
    pub cost: i128,
}

impl FlowSolution {
    /// `cost + pi(from) - pi(to)` per edge.
    pub fn reduced_costs(&self, net: &FlowNetwork, costs: &[i64]) -> Vec<i64> {
        net.edges
            .iter()
            .zip(costs)
            .map(|(e, &c)| c + self.potential[e.from] - self.potential[e.to])
            .collect()
    }
}

impl FlowNetwork {
    pub fn new(n_nodes: usize) -> Self {
        Self { n_nodes, edges: Vec::new() }
    }

    pub fn add_node(&mut self) -> usize {
        self.n_nodes += 1;
        self.n_nodes - 1
    }

    pub fn add_edge(&mut self, from: usize, to: usize, lower: i64, upper: i64) -> usize {
        debug_assert!(lower <= upper);
        self.edges.push(FlowEdge { from, to, lower, upper });
        self.edges.len() - 1
    }

    /// Minimum-cost circulation (all node balances zero).
    pub fn min_cost_circulation(&self, costs: &[i64]) -> Result<FlowSolution, Infeasible> {
        assert_eq!(costs.len(), self.edges.len());
        let mut residual = Residual::new(self.n_nodes + 2);
        let source = self.n_nodes;
        let sink = self.n_nodes + 1;
        let mut imbalance = vec![0i64; self.n_nodes];
        let mut base = Vec::with_capacity(self.edges.len());
        let mut handles = Vec::with_capacity(self.edges.len());
        for (e, &c) in self.edges.iter().zip(costs) {
            // start negative edges at their upper bound, others at the lower
            let start = if c < 0 { e.upper } else { e.lower };
            imbalance[e.to] += start;
            imbalance[e.from] -= start;
            base.push(start);
            let h = if c < 0 {
                // residual only backwards: reducing flow earns -c
                let h = residual.add(e.to, e.from, e.upper - e.lower, -c);
                (h, true)
            } else {
                (residual.add(e.from, e.to, e.upper - e.lower, c), false)
            };
            handles.push(h);
        }
        let mut required = 0i64;
        for (v, &b) in imbalance.iter().enumerate() {
            if b > 0 {
                residual.add(source, v, b, 0);
                required += b;
            } else if b < 0 {
                residual.add(v, sink, -b, 0);
            }
        }
        let routed = residual.primal_dual(source, sink, required);
        if routed < required {
            return Err(Infeasible);
        }
        let flow: Vec<i64> = handles
            .iter()
            .zip(&base)
            .map(|(&(h, reversed), &b)| {
                let pushed = residual.flow_on(h);
                if reversed {
                    b - pushed
                } else {
                    b + pushed
                }
            })
            .collect();
        let cost = flow.iter().zip(costs).map(|(&f, &c)| f as i128 * c as i128).sum();
        let potential = residual.potential[..self.n_nodes].to_vec();
        Ok(FlowSolution { flow, potential, cost })
    }
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    to: usize,
    cap: i64,
    cost: i64,
}

struct Residual {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
    potential: Vec<i64>,
}

const INF: i64 = i64::MAX / 4;

impl Residual {
    fn new(n: usize) -> Self {
        Self { arcs: Vec::new(), adj: vec![Vec::new(); n], potential: vec![0; n] }
    }

    fn add(&mut self, from: usize, to: usize, cap: i64, cost: i64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc { to, cap, cost });
        self.arcs.push(Arc { to: from, cap: 0, cost: -cost });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        id
    }

    fn flow_on(&self, arc: usize) -> i64 {
        self.arcs[arc ^ 1].cap
    }

    fn tail(&self, arc: usize) -> usize {
        self.arcs[arc ^ 1].to
    }

    fn reduced(&self, arc: usize) -> i64 {
        let a = self.arcs[arc];
        a.cost + self.potential[self.tail(arc)] - self.potential[a.to]
    }

    fn dijkstra(&self, source: usize) -> Vec<i64> {
        let n = self.adj.len();
        let mut dist = vec![INF; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0;
        heap.push(Reverse((0i64, source)));
        while let Some(Reverse((d, u))) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &a in &self.adj[u] {
                let arc = self.arcs[a];
                if arc.cap <= 0 {
                    continue;
                }
                let rc = self.reduced(a);
                debug_assert!(rc >= 0, "negative reduced cost {rc}");
                let nd = d + rc;
                if nd < dist[arc.to] {
                    dist[arc.to] = nd;
                    heap.push(Reverse((nd, arc.to)));
                }
            }
        }
        dist
    }

    /// Routes up to `limit` units from `source` to `sink` at minimum cost.
    fn primal_dual(&mut self, source: usize, sink: usize, limit: i64) -> i64 {
        let mut routed = 0;
        while routed < limit {
            let dist = self.dijkstra(source);
            let dt = dist[sink];
            if dt >= INF {
                break;
            }
            for (p, &d) in self.potential.iter_mut().zip(&dist) {
                *p += d.min(dt);
            }
            let pushed = self.blocking_flow(source, sink, limit - routed);
            if pushed == 0 {
                break;
            }
            routed += pushed;
        }
        routed
    }

    /// Dinic phases restricted to arcs with zero reduced cost.
    fn blocking_flow(&mut self, source: usize, sink: usize, limit: i64) -> i64 {
        let n = self.adj.len();
        let mut total = 0;
        loop {
            let mut level = vec![usize::MAX; n];
            level[source] = 0;
            let mut queue = VecDeque::from([source]);
            while let Some(u) = queue.pop_front() {
                for &a in &self.adj[u] {
                    let arc = self.arcs[a];
                    if arc.cap > 0 && level[arc.to] == usize::MAX && self.reduced(a) == 0 {
                        level[arc.to] = level[u] + 1;
                        queue.push_back(arc.to);
                    }
                }
            }
            if level[sink] == usize::MAX {
                return total;
            }
            let mut next = vec![0usize; n];
            loop {
                let f = self.augment(source, sink, limit - total, &level, &mut next);
                if f == 0 {
                    break;
                }
                total += f;
                if total >= limit {
                    return total;
                }
            }
        }
    }

    /// One augmenting path in the level graph, found iteratively.
    fn augment(&mut self, source: usize, sink: usize, limit: i64, level: &[usize], next: &mut [usize]) -> i64 {
        let mut path: Vec<usize> = Vec::new();
        let mut u = source;
        loop {
            if u == sink {
                let f = path.iter().map(|&a| self.arcs[a].cap).fold(limit, i64::min);
                for &a in &path {
                    self.arcs[a].cap -= f;
                    self.arcs[a ^ 1].cap += f;
                }
                return f;
            }
            let mut advanced = false;
            while next[u] < self.adj[u].len() {
                let a = self.adj[u][next[u]];
                let arc = self.arcs[a];
                if arc.cap > 0 && level[arc.to] == level[u] + 1 && self.reduced(a) == 0 {
                    path.push(a);
                    u = arc.to;
                    advanced = true;
                    break;
                }
                next[u] += 1;
            }
            if !advanced {
                // dead end: retreat and skip the arc that led here
                match path.pop() {
                    Some(a) => {
                        u = self.tail(a);
                        next[u] += 1;
                    }
                    None => return 0,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Assignment cost by permutation enumeration.
    fn brute_assignment(cost: &[Vec<i64>]) -> i64 {
        fn rec(i: usize, used: &mut Vec<bool>, cost: &[Vec<i64>]) -> i64 {
            if i == cost.len() {
                return 0;
            }
            let mut best = i64::MAX;
            for j in 0..cost[i].len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[i][j] + rec(i + 1, used, cost));
                    used[j] = false;
                }
            }
            best
        }
        rec(0, &mut vec![false; cost[0].len()], cost)
    }

    fn assignment_network(cost: &[Vec<i64>]) -> (FlowNetwork, Vec<i64>) {
        let (nt, nc) = (cost.len(), cost[0].len());
        let hub = nt + nc;
        let mut net = FlowNetwork::new(nt + nc + 1);
        let mut costs = Vec::new();
        for t in 0..nt {
            net.add_edge(hub, t, 1, 1);
            costs.push(0);
            for c in 0..nc {
                net.add_edge(t, nt + c, 0, 1);
                costs.push(cost[t][c]);
            }
        }
        for c in 0..nc {
            net.add_edge(nt + c, hub, 0, 1);
            costs.push(0);
        }
        (net, costs)
    }

    #[test]
    fn assignment_matches_enumeration() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) % 97) as i64
        };
        for _ in 0..30 {
            let cost: Vec<Vec<i64>> = (0..4).map(|_| (0..6).map(|_| next()).collect()).collect();
            let (net, costs) = assignment_network(&cost);
            let sol = net.min_cost_circulation(&costs).unwrap();
            assert_eq!(sol.cost, brute_assignment(&cost) as i128);
            // duals certify optimality
            let rc = sol.reduced_costs(&net, &costs);
            for (i, e) in net.edges.iter().enumerate() {
                if rc[i] > 0 {
                    assert_eq!(sol.flow[i], e.lower);
                }
                if rc[i] < 0 {
                    assert_eq!(sol.flow[i], e.upper);
                }
            }
        }
    }

    #[test]
    fn negative_costs_and_infeasibility() {
        // a single reward edge in a 2-cycle is taken
        let mut net = FlowNetwork::new(2);
        net.add_edge(0, 1, 0, 3);
        net.add_edge(1, 0, 0, 2);
        let sol = net.min_cost_circulation(&[-5, 1]).unwrap();
        assert_eq!(sol.flow, vec![2, 2]);
        assert_eq!(sol.cost, -8);

        let mut net = FlowNetwork::new(2);
        net.add_edge(0, 1, 2, 2);
        net.add_edge(1, 0, 0, 1);
        assert_eq!(net.min_cost_circulation(&[0, 0]).unwrap_err(), Infeasible);
    }
}
