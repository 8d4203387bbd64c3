//! Refined-balance matching as a min-cost circulation.
//!
//! Every matched pair is one unit of flow `hub -> treated -> control -> hub`.
//! The return leg from a control to the treated unit that closes its cycle
//! runs through a tree of balance hubs: leaves are the finest tier
//! cross-classification, each level's parent is the next coarser prefix, and
//! the root joins everything. Climbing from level `l` to `l - 1` costs one
//! unit of the tier-`l` objective, so the cheapest routing climbs exactly
//! `TV(m, X_1 u ... u X_l)` times at level `l`. A reward on each
//! `hub -> treated` edge makes cardinality the top objective.
//!
//! The objectives are (in priority order) matched count, tier TVs from the
//! top tier down, then scaled distance. They are combined with dominating
//! weights when those fit in `i64`; otherwise each objective is solved in
//! turn and the network is restricted to the optimal face (edges with
//! non-zero reduced cost are frozen) before the next one.

use std::collections::VecDeque;

use super::constraints::MatchProblem;
use super::flow::{FlowNetwork, FlowSolution};
use super::{MatchError, SolverMode, SolverPath, DISTANCE_SCALE};

/// Edge bookkeeping for one built network.
pub(crate) struct RefinedNetwork {
    pub net: FlowNetwork,
    /// `hub -> treated` edge per treated unit.
    pub reward: Vec<usize>,
    /// `(treated, control, edge)` for admissible pairs.
    pub pairs: Vec<(usize, usize, usize)>,
    /// Up edges per level, index 0 is tier 1.
    pub up: Vec<Vec<usize>>,
    pub scaled: Vec<i64>,
    pub units: i64,
}

pub(crate) fn scale_distance(d: f64) -> i64 {
    (d * DISTANCE_SCALE).round() as i64
}

impl RefinedNetwork {
    pub fn build(problem: &MatchProblem, per_treated: i64) -> Self {
        let (nt, nc) = (problem.n_treated(), problem.n_controls());
        let units = nt as i64 * per_treated;
        let mut net = FlowNetwork::new(nt + nc);
        // hub nodes: level 0 is the root
        let mut level_nodes: Vec<Vec<usize>> = vec![vec![net.add_node()]];
        for tier in &problem.tiers {
            level_nodes.push((0..tier.n_keys()).map(|_| net.add_node()).collect());
        }
        let mut up = Vec::with_capacity(problem.tiers.len());
        for (l, tier) in problem.tiers.iter().enumerate() {
            let mut edges = Vec::with_capacity(tier.n_keys());
            for (k, &p) in tier.parent.iter().enumerate() {
                let child = level_nodes[l + 1][k];
                let parent = level_nodes[l][p as usize];
                edges.push(net.add_edge(child, parent, 0, units));
                net.add_edge(parent, child, 0, units);
            }
            up.push(edges);
        }
        let leaf = |is_treated: bool, idx: usize| -> usize {
            match problem.tiers.last() {
                None => level_nodes[0][0],
                Some(t) => level_nodes[problem.tiers.len()][if is_treated { t.treated[idx] } else { t.controls[idx] } as usize],
            }
        };
        let reward = (0..nt).map(|t| net.add_edge(leaf(true, t), t, 0, per_treated)).collect();
        let mut pairs = Vec::with_capacity(problem.n_admissible());
        let mut scaled = Vec::with_capacity(problem.n_admissible());
        for t in 0..nt {
            for c in 0..nc {
                if problem.is_admissible(t, c) {
                    pairs.push((t, c, net.add_edge(t, nt + c, 0, 1)));
                    scaled.push(scale_distance(problem.distance(t, c)));
                }
            }
        }
        for c in 0..nc {
            net.add_edge(nt + c, leaf(false, c), 0, 1);
        }
        Self { net, reward, pairs, up, scaled, units }
    }

    /// Cost vectors in priority order: cardinality, tiers, distance.
    fn objectives(&self) -> Vec<Vec<i64>> {
        let m = self.net.edges.len();
        let mut out = Vec::with_capacity(self.up.len() + 2);
        let mut card = vec![0; m];
        for &e in &self.reward {
            card[e] = -1;
        }
        out.push(card);
        for level in &self.up {
            let mut v = vec![0; m];
            for &e in level {
                v[e] = 1;
            }
            out.push(v);
        }
        let mut dist = vec![0; m];
        for (&(_, _, e), &d) in self.pairs.iter().zip(&self.scaled) {
            dist[e] = d;
        }
        out.push(dist);
        out
    }

    /// Single cost vector with dominating weights, or `None` on overflow.
    fn weighted_costs(&self, objectives: &[Vec<i64>]) -> Option<Vec<i64>> {
        let units = self.units as i128;
        let dmax = self.scaled.iter().copied().max().unwrap_or(0).max(0) as i128;
        // bound on everything below the current priority
        let mut below = units * dmax;
        let mut weights = vec![1i128; objectives.len()];
        for w in weights.iter_mut().rev().skip(1) {
            *w = below + 1;
            below += *w * units;
        }
        let limit = (i64::MAX / 16) as i128;
        let mut total_abs: i128 = 0;
        let mut combined = vec![0i64; self.net.edges.len()];
        for (i, slot) in combined.iter_mut().enumerate() {
            let c: i128 = objectives.iter().zip(&weights).map(|(o, &w)| o[i] as i128 * w).sum();
            total_abs += c.abs() * self.net.edges[i].upper as i128;
            if c.abs() > limit || total_abs > limit {
                return None;
            }
            *slot = c as i64;
        }
        Some(combined)
    }
}

/// Freezes every edge with non-zero reduced cost at its current flow.
fn restrict(net: &mut FlowNetwork, sol: &FlowSolution, costs: &[i64]) {
    let rc = sol.reduced_costs(net, costs);
    for (e, (&r, &f)) in net.edges.iter_mut().zip(rc.iter().zip(&sol.flow)) {
        if r != 0 {
            e.lower = f;
            e.upper = f;
        }
    }
}

pub(crate) struct Solved {
    pub flow: Vec<i64>,
    pub path: SolverPath,
}

pub(crate) fn solve(rn: &mut RefinedNetwork, mode: SolverMode, canonical: bool, order: &[usize]) -> Result<Solved, MatchError> {
    let objectives = rn.objectives();
    let weighted = match mode {
        SolverMode::Lexicographic => None,
        _ => rn.weighted_costs(&objectives),
    };
    let (mut flow, path) = match (weighted, mode) {
        (Some(costs), _) => {
            let sol = rn.net.min_cost_circulation(&costs).map_err(|_| MatchError::FlowInfeasible)?;
            restrict(&mut rn.net, &sol, &costs);
            (sol.flow, SolverPath::Penalty)
        }
        (None, SolverMode::Penalty) => return Err(MatchError::PenaltyOverflow),
        (None, _) => {
            let mut flow = Vec::new();
            for costs in &objectives {
                let sol = rn.net.min_cost_circulation(costs).map_err(|_| MatchError::FlowInfeasible)?;
                restrict(&mut rn.net, &sol, costs);
                flow = sol.flow;
            }
            (flow, SolverPath::Lexicographic)
        }
    };
    if canonical {
        canonicalize(&mut rn.net, &mut flow, order);
    }
    Ok(Solved { flow, path })
}

/// Among flows of the (restricted) optimal face, walks pair edges in the
/// given order and forces each one in whenever a residual cycle through it
/// exists. Yields the lexicographically smallest pair list.
fn canonicalize(net: &mut FlowNetwork, flow: &mut [i64], order: &[usize]) {
    for &e in order {
        let edge = net.edges[e];
        if edge.lower == edge.upper {
            continue;
        }
        if flow[e] == edge.upper {
            net.edges[e].lower = edge.upper;
            continue;
        }
        match residual_path(net, flow, edge.to, edge.from) {
            Some(path) => {
                flow[e] += 1;
                for (id, forward) in path {
                    flow[id] += if forward { 1 } else { -1 };
                }
                let f = flow[e];
                net.edges[e].lower = f;
                net.edges[e].upper = f;
            }
            None => {
                net.edges[e].upper = flow[e];
            }
        }
    }
}

/// BFS in the residual graph; returns `(edge, is_forward)` steps.
fn residual_path(net: &FlowNetwork, flow: &[i64], from: usize, to: usize) -> Option<Vec<(usize, bool)>> {
    let n = net.n_nodes;
    let mut adj: Vec<Vec<(usize, usize, bool)>> = vec![Vec::new(); n];
    for (i, e) in net.edges.iter().enumerate() {
        if flow[i] < e.upper {
            adj[e.from].push((e.to, i, true));
        }
        if flow[i] > e.lower {
            adj[e.to].push((e.from, i, false));
        }
    }
    let mut prev: Vec<Option<(usize, usize, bool)>> = vec![None; n];
    let mut seen = vec![false; n];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        if u == to {
            let mut steps = Vec::new();
            let mut v = to;
            while let Some((p, id, fwd)) = prev[v] {
                steps.push((id, fwd));
                v = p;
            }
            steps.reverse();
            return Some(steps);
        }
        for &(v, id, fwd) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                prev[v] = Some((u, id, fwd));
                queue.push_back(v);
            }
        }
    }
    None
}
