//! Cheapest transfers realizing a fixed load vector.
//!
//! With loads fixed, only communication cost is left to optimize, which is an
//! uncapacitated min-cost flow with demands `b_i = l_i − n_i`. The solver runs
//! successive shortest paths with node potentials and then cancels the
//! zero-cost cycles left in the support, so the positive edges form a forest.
//!
//! The same module handles the per-origin view: [`find_negative_cycle`] looks
//! for a rotation of requests between servers that keeps every load but
//! lowers latency, and [`cancel_cycle`] applies it.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Instance, OriginAssignment};

/// Demands (`b_i > 0`) and supplies (`b_i < 0`) over a complete graph with arc costs.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowProblem {
    b: Vec<f64>,
    cost: Matrix,
}

impl FlowProblem {
    pub fn new(b: Vec<f64>, cost: Matrix) -> Result<Self> {
        if b.len() != cost.dim() {
            return Err(Error::Dimension(format!("{} demands for a {}-node graph", b.len(), cost.dim())));
        }
        let volume: f64 = b.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
        let residual: f64 = b.iter().sum();
        if residual.abs() > 1e-9 * volume {
            return Err(Error::Unbalanced(residual));
        }
        for i in 0..cost.dim() {
            for j in 0..cost.dim() {
                if !(cost[(i, j)] >= 0.0 && cost[(i, j)].is_finite()) {
                    return Err(Error::InvalidParameter(format!("arc cost [{i}][{j}] = {}", cost[(i, j)])));
                }
            }
        }
        Ok(FlowProblem { b, cost })
    }

    pub fn demands(&self) -> &[f64] {
        &self.b
    }

    pub fn cost(&self) -> &Matrix {
        &self.cost
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    pub flow: Matrix,
    pub total_cost: f64,
}

impl FlowSolution {
    /// Arcs carrying positive flow.
    pub fn support(&self) -> Vec<(usize, usize)> {
        let m = self.flow.dim();
        let mut out = Vec::new();
        for i in 0..m {
            for j in 0..m {
                if i != j && self.flow[(i, j)] > 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Exact min-cost flow whose positive arcs form an undirected forest.
pub fn min_cost_flow(problem: &FlowProblem) -> FlowSolution {
    let m = problem.b.len();
    let cost = &problem.cost;
    let volume: f64 = problem.b.iter().filter(|x| **x > 0.0).sum();
    let eps = 1e-12 * volume.max(1.0);

    let mut supply: Vec<f64> = problem.b.iter().map(|x| (-x).max(0.0)).collect();
    let mut demand: Vec<f64> = problem.b.iter().map(|x| x.max(0.0)).collect();
    let mut flow = Matrix::zeros(m);
    let mut potential = vec![0.0; m];

    while supply.iter().any(|s| *s > eps) && demand.iter().any(|d| *d > eps) {
        let Some(path) = shortest_path(cost, &flow, &supply, &demand, &mut potential, eps) else {
            break;
        };
        let source = path.source;
        let sink = path.sink;
        let mut amount = supply[source].min(demand[sink]);
        for &(u, v, backward) in &path.arcs {
            if backward {
                amount = amount.min(flow[(v, u)]);
            }
        }
        for &(u, v, backward) in &path.arcs {
            if backward {
                flow[(v, u)] -= amount;
            } else {
                flow[(u, v)] += amount;
            }
        }
        supply[source] -= amount;
        demand[sink] -= amount;
    }

    make_forest(cost, &mut flow, eps);
    let total_cost = flow_cost(cost, &flow);
    FlowSolution { flow, total_cost }
}

struct AugmentingPath {
    source: usize,
    sink: usize,
    /// `(from, to, uses_reverse_residual)`
    arcs: Vec<(usize, usize, bool)>,
}

/// Dense Dijkstra on reduced costs from every node with spare supply.
fn shortest_path(
    cost: &Matrix,
    flow: &Matrix,
    supply: &[f64],
    demand: &[f64],
    potential: &mut [f64],
    eps: f64,
) -> Option<AugmentingPath> {
    let m = supply.len();
    let mut dist = vec![f64::INFINITY; m];
    let mut done = vec![false; m];
    let mut parent: Vec<Option<(usize, bool)>> = vec![None; m];
    for i in 0..m {
        if supply[i] > eps {
            dist[i] = 0.0;
        }
    }
    loop {
        let Some(u) = (0..m)
            .filter(|&v| !done[v] && dist[v].is_finite())
            .min_by(|&a, &b| dist[a].total_cmp(&dist[b]))
        else {
            break;
        };
        done[u] = true;
        for v in 0..m {
            if v == u || done[v] {
                continue;
            }
            let forward = (cost[(u, v)] + potential[u] - potential[v]).max(0.0);
            let mut best = (forward, false);
            if flow[(v, u)] > eps {
                let backward = (-cost[(v, u)] + potential[u] - potential[v]).max(0.0);
                if backward < best.0 {
                    best = (backward, true);
                }
            }
            let candidate = dist[u] + best.0;
            if candidate < dist[v] {
                dist[v] = candidate;
                parent[v] = Some((u, best.1));
            }
        }
    }
    let sink = (0..m)
        .filter(|&v| demand[v] > eps && dist[v].is_finite())
        .min_by(|&a, &b| dist[a].total_cmp(&dist[b]))?;
    for v in 0..m {
        if dist[v].is_finite() {
            potential[v] += dist[v];
        }
    }
    let mut arcs = Vec::new();
    let mut v = sink;
    while let Some((u, backward)) = parent[v] {
        arcs.push((u, v, backward));
        v = u;
    }
    arcs.reverse();
    Some(AugmentingPath { source: v, sink, arcs })
}

pub(crate) fn flow_cost(cost: &Matrix, flow: &Matrix) -> f64 {
    let m = flow.dim();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                total += cost[(i, j)] * flow[(i, j)];
            }
        }
    }
    total
}

/// Removes opposite arc pairs and undirected cycles from the support without raising cost.
fn make_forest(cost: &Matrix, flow: &mut Matrix, eps: f64) {
    let m = flow.dim();
    for i in 0..m {
        flow[(i, i)] = 0.0;
        for j in 0..i {
            let both = flow[(i, j)].min(flow[(j, i)]);
            if both > 0.0 {
                flow[(i, j)] -= both;
                flow[(j, i)] -= both;
            }
        }
    }
    for i in 0..m {
        for j in 0..m {
            if flow[(i, j)] < eps {
                flow[(i, j)] = 0.0;
            }
        }
    }
    while let Some(cycle) = undirected_cycle(flow) {
        // Each step (u, v, aligned): aligned means the flow runs u → v.
        let along: f64 = cycle
            .iter()
            .map(|&(u, v, aligned)| if aligned { cost[(u, v)] } else { -cost[(v, u)] })
            .sum();
        // Push in whichever orientation does not increase cost; on a zero-cost
        // tie pick one that drains some arc.
        let forward = if along != 0.0 { along < 0.0 } else { cycle.iter().any(|s| !s.2) };
        let amount = cycle
            .iter()
            .filter(|s| s.2 != forward)
            .map(|&(u, v, aligned)| if aligned { flow[(u, v)] } else { flow[(v, u)] })
            .fold(f64::INFINITY, f64::min);
        for &(u, v, aligned) in &cycle {
            let (a, b) = if aligned { (u, v) } else { (v, u) };
            if aligned == forward {
                flow[(a, b)] += amount;
            } else {
                flow[(a, b)] -= amount;
                if flow[(a, b)] < eps {
                    flow[(a, b)] = 0.0;
                }
            }
        }
    }
}

/// Finds a cycle in the undirected support graph (after netting there is at
/// most one direction per pair). Returns steps `(u, v, flow runs u → v)`.
fn undirected_cycle(flow: &Matrix) -> Option<Vec<(usize, usize, bool)>> {
    let m = flow.dim();
    let linked = |u: usize, v: usize| u != v && (flow[(u, v)] > 0.0 || flow[(v, u)] > 0.0);
    let mut parent: Vec<Option<usize>> = vec![None; m];
    let mut seen = vec![false; m];
    for root in 0..m {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            for v in 0..m {
                if !linked(u, v) || parent[u] == Some(v) {
                    continue;
                }
                if seen[v] {
                    // Close the cycle: path u → root and v → root meet at their common ancestor.
                    let path_u = ancestors(&parent, u);
                    let path_v = ancestors(&parent, v);
                    let meet = *path_u.iter().find(|x| path_v.contains(x))?;
                    let mut nodes: Vec<usize> = path_v.iter().take_while(|x| **x != meet).copied().collect();
                    nodes.push(meet);
                    let mut down: Vec<usize> = path_u.iter().take_while(|x| **x != meet).copied().collect();
                    down.reverse();
                    nodes.extend(down);
                    // nodes: v .. meet .. u, closed by the edge u → v
                    let mut steps = Vec::with_capacity(nodes.len());
                    for w in nodes.windows(2) {
                        steps.push((w[0], w[1], flow[(w[0], w[1])] > 0.0));
                    }
                    steps.push((u, v, flow[(u, v)] > 0.0));
                    return Some(steps);
                }
                seen[v] = true;
                parent[v] = Some(u);
                stack.push(v);
            }
        }
    }
    None
}

fn ancestors(parent: &[Option<usize>], mut v: usize) -> Vec<usize> {
    let mut out = vec![v];
    while let Some(p) = parent[v] {
        out.push(p);
        v = p;
    }
    out
}

/// Cheapest transfers that move the instance from its own loads to `target_loads`.
pub fn optimize_network_flow(inst: &Instance, target_loads: &[f64]) -> Result<FlowSolution> {
    let m = inst.m();
    if target_loads.len() != m {
        return Err(Error::Dimension(format!("{} target loads for {m} servers", target_loads.len())));
    }
    for (i, l) in target_loads.iter().enumerate() {
        inst.processing_time(i, *l)?;
    }
    let b: Vec<f64> = (0..m).map(|i| target_loads[i] - inst.own_load(i)).collect();
    let residual: f64 = b.iter().sum();
    if residual.abs() > 1e-9 * inst.l_tot().max(1.0) {
        return Err(Error::Unbalanced(residual));
    }
    let problem = FlowProblem { b, cost: inst.latency().clone() };
    Ok(min_cost_flow(&problem))
}

/// Gate on cycle gain, relative to the largest latency.
pub fn cycle_tolerance(inst: &Instance) -> f64 {
    1e-9 * inst.latency().max().max(f64::MIN_POSITIVE)
}

/// A rotation of requests: at step `(server, origin)` requests of `origin`
/// leave `server` for the next step's server (wrapping around).
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeCycle {
    pub steps: Vec<(usize, usize)>,
}

impl ExchangeCycle {
    /// Change in communication cost per request rotated.
    pub fn gain(&self, inst: &Instance) -> f64 {
        let len = self.steps.len();
        (0..len)
            .map(|t| {
                let (from, origin) = self.steps[t];
                let to = self.steps[(t + 1) % len].0;
                inst.c(origin, to) - inst.c(origin, from)
            })
            .sum()
    }
}

/// Labeled edge `from → to` for requests of `origin` with weight `c[origin][to] − c[origin][from]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LabeledEdge {
    pub from: usize,
    pub to: usize,
    pub origin: usize,
}

/// Bellman–Ford over labeled edges, keeping the cheapest label per server pair.
/// Relaxations must improve by more than `tau`, so any returned cycle gains
/// at least `2·tau` per request.
pub(crate) fn negative_labeled_cycle(inst: &Instance, edges: &[LabeledEdge], tau: f64) -> Option<ExchangeCycle> {
    let m = inst.m();
    let weight = |e: &LabeledEdge| inst.c(e.origin, e.to) - inst.c(e.origin, e.from);
    let mut best: Vec<Option<(f64, usize)>> = vec![None; m * m];
    for e in edges {
        if e.from == e.to {
            continue;
        }
        let w = weight(e);
        let slot = &mut best[e.from * m + e.to];
        if slot.is_none_or(|(bw, _)| w < bw) {
            *slot = Some((w, e.origin));
        }
    }
    let mut dist = vec![0.0; m];
    let mut pred: Vec<Option<(usize, usize)>> = vec![None; m];
    let mut last = None;
    for _ in 0..m {
        last = None;
        for u in 0..m {
            for v in 0..m {
                if let Some((w, origin)) = best[u * m + v] {
                    if dist[u] + w < dist[v] - tau {
                        dist[v] = dist[u] + w;
                        pred[v] = Some((u, origin));
                        last = Some(v);
                    }
                }
            }
        }
        last?;
    }
    let mut v = last?;
    for _ in 0..m {
        v = pred[v]?.0;
    }
    let start = v;
    let mut rev = Vec::new();
    loop {
        let (u, origin) = pred[v]?;
        rev.push((u, origin));
        v = u;
        if v == start {
            break;
        }
    }
    rev.reverse();
    Some(ExchangeCycle { steps: rev })
}

/// A rotation of requests that keeps all loads but lowers latency, if one exists.
pub fn find_negative_cycle(inst: &Instance, state: &OriginAssignment) -> Option<ExchangeCycle> {
    let m = inst.m();
    let eps = inst.slack();
    let mut edges = Vec::new();
    for k in 0..m {
        for i in 0..m {
            if state.r[(k, i)] > eps {
                for j in 0..m {
                    if j != i {
                        edges.push(LabeledEdge { from: i, to: j, origin: k });
                    }
                }
            }
        }
    }
    let cycle = negative_labeled_cycle(inst, &edges, cycle_tolerance(inst))?;
    (cycle.gain(inst) < -cycle_tolerance(inst)).then_some(cycle)
}

/// Rotates the bottleneck amount around `cycle`; loads are unchanged.
pub fn cancel_cycle(inst: &Instance, state: &OriginAssignment, cycle: &ExchangeCycle) -> Result<OriginAssignment> {
    let m = inst.m();
    let len = cycle.steps.len();
    if len < 2 {
        return Err(Error::InvalidCycle("a cycle needs at least two servers".into()));
    }
    let mut servers: Vec<usize> = cycle.steps.iter().map(|s| s.0).collect();
    if cycle.steps.iter().any(|&(i, k)| i >= m || k >= m) {
        return Err(Error::InvalidCycle("server or origin out of range".into()));
    }
    servers.sort_unstable();
    servers.dedup();
    if servers.len() != len {
        return Err(Error::InvalidCycle("servers repeat".into()));
    }
    let bottleneck = cycle
        .steps
        .iter()
        .map(|&(i, k)| state.r[(k, i)])
        .fold(f64::INFINITY, f64::min);
    if bottleneck <= 0.0 {
        return Err(Error::InvalidCycle("bottleneck is zero".into()));
    }
    if cycle.gain(inst) >= 0.0 {
        return Err(Error::InvalidCycle("rotation does not reduce latency".into()));
    }
    let mut next = state.clone();
    for t in 0..len {
        let (from, origin) = cycle.steps[t];
        let to = cycle.steps[(t + 1) % len].0;
        next.r[(origin, from)] -= bottleneck;
        next.r[(origin, to)] += bottleneck;
    }
    Ok(next)
}

/// Cancels negative cycles until none remain. Returns the number cancelled.
pub fn cancel_negative_cycles(inst: &Instance, state: &mut OriginAssignment) -> usize {
    let mut count = 0;
    while let Some(cycle) = find_negative_cycle(inst, state) {
        match cancel_cycle(inst, state, &cycle) {
            Ok(next) => *state = next,
            Err(_) => break,
        }
        count += 1;
    }
    count
}
