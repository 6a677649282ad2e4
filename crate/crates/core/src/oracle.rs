//! Reference solver and error-graph checks used to validate the algorithms.
//!
//! The oracle deliberately shares no optimization code with the solvers. It
//! works on origin assignments, first running projected gradient descent and
//! then exact line searches along improving exchanges: moving one origin's
//! requests between two servers, chains of such moves through intermediate
//! servers (needed once capacities bind), and pure latency-saving rotations.
//! With convex costs the only stationary point of these moves is the optimum.

use crate::error::{Error, Result};
use crate::flow::{cycle_tolerance, negative_labeled_cycle, LabeledEdge};
use crate::matrix::Matrix;
use crate::model::{Instance, OriginAssignment};

pub const DEFAULT_MAX_SERVERS: usize = 8;
const GRADIENT_STEPS: usize = 400;
const EXCHANGE_STEPS: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub assignment: OriginAssignment,
    pub loads: Vec<f64>,
    pub objective: f64,
}

/// Solves from a start spreading every origin proportionally to capacity.
pub fn solve_oracle(inst: &Instance) -> Result<OracleSolution> {
    let m = inst.m();
    let caps: Vec<f64> = (0..m).map(|i| inst.cap(i)).collect();
    let total: f64 = caps.iter().sum();
    let mut x = Matrix::zeros(m);
    for k in 0..m {
        for i in 0..m {
            x[(k, i)] = inst.own_load(k) * caps[i] / total;
        }
    }
    solve_oracle_from(inst, &OriginAssignment { r: x })
}

/// Solves from a given feasible assignment.
pub fn solve_oracle_from(inst: &Instance, start: &OriginAssignment) -> Result<OracleSolution> {
    let m = inst.m();
    if m > DEFAULT_MAX_SERVERS {
        return Err(Error::CapExceeded { m, cap: DEFAULT_MAX_SERVERS });
    }
    let mut x = OriginAssignment::new(inst, start.r.clone())?.r;
    let loads = column_sums(&x);
    if let Some(i) = (0..m).find(|&i| loads[i] > inst.lf(i).l_max() + inst.slack()) {
        return Err(Error::Infeasible { server: i, load: loads[i], l_max: inst.lf(i).l_max() });
    }
    gradient_phase(inst, &mut x);
    exchange_phase(inst, &mut x);
    let loads = column_sums(&x);
    let objective = cost(inst, &x);
    Ok(OracleSolution { assignment: OriginAssignment { r: x }, loads, objective })
}

fn column_sums(x: &Matrix) -> Vec<f64> {
    (0..x.dim()).map(|i| x.column(i).sum()).collect()
}

fn cost(inst: &Instance, x: &Matrix) -> f64 {
    let m = inst.m();
    let loads = column_sums(x);
    let processing: f64 = (0..m).map(|i| inst.lf(i).h(loads[i].max(0.0))).sum();
    let mut latency = 0.0;
    for k in 0..m {
        for i in 0..m {
            latency += inst.c(k, i) * x[(k, i)];
        }
    }
    processing + latency
}

/// Euclidean projection of `v` onto `{y ≥ 0, Σ y = total}`.
fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    if total <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (idx, u) in sorted.iter().enumerate() {
        acc += u;
        let t = (acc - total) / (idx + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn gradient_phase(inst: &Instance, x: &mut Matrix) {
    let m = inst.m();
    let mut current = cost(inst, x);
    let mut step = inst.l_tot().max(1.0);
    for _ in 0..GRADIENT_STEPS {
        let loads = column_sums(x);
        let marginal: Vec<f64> = (0..m).map(|i| inst.lf(i).g_above(loads[i].max(0.0))).collect();
        loop {
            let mut y = Matrix::zeros(m);
            for k in 0..m {
                let moved: Vec<f64> = (0..m).map(|i| x[(k, i)] - step * (marginal[i] + inst.c(k, i))).collect();
                for (i, v) in project_simplex(&moved, inst.own_load(k)).into_iter().enumerate() {
                    y[(k, i)] = v;
                }
            }
            let new_loads = column_sums(&y);
            let fits = (0..m).all(|i| new_loads[i] <= inst.cap(i).max(loads[i]));
            if fits {
                let c = cost(inst, &y);
                if c < current {
                    *x = y;
                    current = c;
                    step *= 1.5;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-14 * inst.l_tot().max(1.0) {
                return;
            }
        }
    }
}

/// Minimizes a convex function on `[0, hi]` by bisection on its right derivative.
fn line_search(phi: impl Fn(f64) -> f64, dphi: impl Fn(f64) -> f64, hi: f64, tol: f64) -> f64 {
    if hi <= 0.0 || dphi(0.0) >= 0.0 {
        return 0.0;
    }
    if dphi(hi) < 0.0 {
        return hi;
    }
    let (mut a, mut b) = (0.0, hi);
    for _ in 0..200 {
        if b - a <= tol {
            break;
        }
        let mid = 0.5 * (a + b);
        if dphi(mid) < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    if phi(b) <= phi(a) {
        b
    } else {
        a
    }
}

/// A chain of single-origin moves `(from, to, origin)`.
struct Exchange {
    moves: Vec<(usize, usize, usize)>,
    /// Latency change per unit moved along the chain.
    latency: f64,
}

impl Exchange {
    fn bottleneck(&self, x: &Matrix) -> f64 {
        self.moves.iter().map(|&(from, _, k)| x[(k, from)]).fold(f64::INFINITY, f64::min)
    }

    fn start(&self) -> usize {
        self.moves[0].0
    }

    fn end(&self) -> usize {
        self.moves[self.moves.len() - 1].1
    }

    fn apply(&self, x: &mut Matrix, t: f64) {
        for &(from, to, k) in &self.moves {
            x[(k, from)] = (x[(k, from)] - t).max(0.0);
            x[(k, to)] += t;
        }
    }
}

/// Cheapest single move between every ordered pair of servers.
fn move_graph(inst: &Instance, x: &Matrix) -> Vec<Vec<Option<(f64, usize)>>> {
    let m = inst.m();
    let mut best = vec![vec![None; m]; m];
    for (i, row) in best.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            if i == j {
                continue;
            }
            for k in 0..m {
                if x[(k, i)] > 0.0 {
                    let w = inst.c(k, j) - inst.c(k, i);
                    if slot.is_none_or(|(bw, _)| w < bw) {
                        *slot = Some((w, k));
                    }
                }
            }
        }
    }
    best
}

fn find_rotation(graph: &[Vec<Option<(f64, usize)>>], tau: f64) -> Option<Exchange> {
    let m = graph.len();
    let mut dist = vec![0.0; m];
    let mut pred: Vec<Option<usize>> = vec![None; m];
    let mut last = None;
    for _ in 0..m {
        last = None;
        for i in 0..m {
            for j in 0..m {
                if let Some((w, _)) = graph[i][j] {
                    if dist[i] + w < dist[j] - tau {
                        dist[j] = dist[i] + w;
                        pred[j] = Some(i);
                        last = Some(j);
                    }
                }
            }
        }
        last?;
    }
    let mut v = last?;
    for _ in 0..m {
        v = pred[v]?;
    }
    let mut cycle = vec![v];
    let mut u = pred[v]?;
    while u != v {
        cycle.push(u);
        u = pred[u]?;
    }
    cycle.reverse();
    let mut moves = Vec::new();
    let mut latency = 0.0;
    for idx in 0..cycle.len() {
        let (a, b) = (cycle[idx], cycle[(idx + 1) % cycle.len()]);
        let (w, k) = graph[a][b]?;
        moves.push((a, b, k));
        latency += w;
    }
    (latency < -tau).then_some(Exchange { moves, latency })
}

/// Chains from one server to another with negative marginal cost, most
/// negative first.
fn find_chains(inst: &Instance, graph: &[Vec<Option<(f64, usize)>>], loads: &[f64], tau: f64) -> Vec<Exchange> {
    let m = graph.len();
    let mut dist = vec![vec![f64::INFINITY; m]; m];
    let mut next: Vec<Vec<Option<usize>>> = vec![vec![None; m]; m];
    for i in 0..m {
        for j in 0..m {
            if let Some((w, _)) = graph[i][j] {
                dist[i][j] = w;
                next[i][j] = Some(j);
            }
        }
    }
    // near-zero cycles left by the rotation search must not thread paths
    for v in 0..m {
        for i in 0..m {
            for j in 0..m {
                if i != j && dist[i][v] + dist[v][j] < dist[i][j] - tau {
                    dist[i][j] = dist[i][v] + dist[v][j];
                    next[i][j] = next[i][v];
                }
            }
        }
    }
    let mut candidates = Vec::new();
    for a in 0..m {
        if loads[a] <= 0.0 {
            continue;
        }
        let out = inst.lf(a).g_below(loads[a].min(inst.lf(a).l_max()));
        for b in 0..m {
            if a == b || !dist[a][b].is_finite() || loads[b] >= inst.cap(b) {
                continue;
            }
            let reduced = dist[a][b] + inst.lf(b).g_above(loads[b].max(0.0)) - out;
            if reduced < -tau {
                candidates.push((reduced, a, b));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    candidates.into_iter().filter_map(|(_, a, b)| chain_path(graph, &next, a, b)).collect()
}

fn chain_path(graph: &[Vec<Option<(f64, usize)>>], next: &[Vec<Option<usize>>], a: usize, b: usize) -> Option<Exchange> {
    let mut moves = Vec::new();
    let mut latency = 0.0;
    let mut u = a;
    while u != b {
        let v = next[u][b]?;
        let (w, k) = graph[u][v]?;
        if moves.iter().any(|&(from, _, _)| from == v) || moves.len() >= graph.len() {
            // looped; the direct move is still a valid chain
            let (w, k) = graph[a][b]?;
            return Some(Exchange { moves: vec![(a, b, k)], latency: w });
        }
        moves.push((u, v, k));
        latency += w;
        u = v;
    }
    Some(Exchange { moves, latency })
}

fn marginal_scale(inst: &Instance) -> f64 {
    let m = inst.m();
    let g: f64 = (0..m).map(|i| inst.lf(i).g_above(inst.cap(i)).abs()).fold(0.0, f64::max);
    1.0 + g + inst.latency().max()
}

fn exchange_phase(inst: &Instance, x: &mut Matrix) {
    let tau = 1e-12 * marginal_scale(inst);
    let tol = 1e-15 * inst.l_tot().max(1.0);
    for _ in 0..EXCHANGE_STEPS {
        let graph = move_graph(inst, x);
        if let Some(rot) = find_rotation(&graph, tau) {
            let t = rot.bottleneck(x);
            if t > 0.0 {
                rot.apply(x, t);
                continue;
            }
        }
        let loads = column_sums(x);
        let before = cost(inst, x);
        let improved = find_chains(inst, &graph, &loads, tau).into_iter().find_map(|chain| {
            let (a, b) = (chain.start(), chain.end());
            let hi = chain.bottleneck(x).min(inst.cap(b) - loads[b]);
            let (fa, fb) = (inst.lf(a), inst.lf(b));
            let (la, lb, w) = (loads[a], loads[b], chain.latency);
            let phi = |t: f64| fa.h((la - t).max(0.0)) + fb.h(lb + t) + w * t;
            let right = |t: f64| {
                let out = if la - t <= 0.0 { f64::NEG_INFINITY } else { fa.g_below(la - t) };
                -out + fb.g_above(lb + t) + w
            };
            let left = |t: f64| -fa.g_above(la - t) + fb.g_below(lb + t) + w;
            let t = line_search(phi, right, hi, tol);
            // the bisection stops where the snapped marginals flip, which can sit
            // just off a breakpoint that is the exact minimizer
            let t = fa
                .kinks_near(la - t)
                .map(|p| la - p)
                .chain(fb.kinks_near(lb + t).map(|p| p - lb))
                .find(|&s| s > 0.0 && s <= hi && left(s) <= 0.0 && (s == hi || right(s) >= 0.0))
                .unwrap_or(t);
            let mut y = x.clone();
            chain.apply(&mut y, t);
            // near the optimum the gain can fall below the objective's resolution
            (t > 0.0 && cost(inst, &y) <= before).then_some(y)
        });
        match improved {
            Some(y) => *x = y,
            None => return,
        }
    }
}

/// Requests of `origin` that should run on `to` instead of `from`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorEdge {
    pub from: usize,
    pub to: usize,
    pub origin: usize,
    pub weight: f64,
}

/// Per-origin moves turning the current assignment into an optimal one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorGraph {
    pub edges: Vec<ErrorEdge>,
}

impl ErrorGraph {
    pub fn succ(&self, i: usize) -> impl Iterator<Item = &ErrorEdge> + '_ {
        self.edges.iter().filter(move |e| e.from == i)
    }

    pub fn prec(&self, i: usize) -> impl Iterator<Item = &ErrorEdge> + '_ {
        self.edges.iter().filter(move |e| e.to == i)
    }

    /// Applies every move to `state`.
    pub fn apply(&self, state: &OriginAssignment) -> OriginAssignment {
        let mut r = state.r.clone();
        for e in &self.edges {
            r[(e.origin, e.from)] -= e.weight;
            r[(e.origin, e.to)] += e.weight;
        }
        OriginAssignment { r }
    }
}

/// Matches, origin by origin, servers holding too many of its requests with
/// servers holding too few, in index order. Moves are never chained.
pub fn build_error_graph(inst: &Instance, state: &OriginAssignment, optimal: &OriginAssignment) -> ErrorGraph {
    let m = inst.m();
    let eps = inst.slack();
    let mut edges = Vec::new();
    for k in 0..m {
        let diff: Vec<f64> = (0..m).map(|i| state.r[(k, i)] - optimal.r[(k, i)]).collect();
        let mut surplus: Vec<(usize, f64)> = (0..m).filter(|&i| diff[i] > eps).map(|i| (i, diff[i])).collect();
        let mut deficit: Vec<(usize, f64)> = (0..m).filter(|&i| diff[i] < -eps).map(|i| (i, -diff[i])).collect();
        let (mut s, mut d) = (0, 0);
        while s < surplus.len() && d < deficit.len() {
            let w = surplus[s].1.min(deficit[d].1);
            edges.push(ErrorEdge { from: surplus[s].0, to: deficit[d].0, origin: k, weight: w });
            surplus[s].1 -= w;
            deficit[d].1 -= w;
            if surplus[s].1 <= eps {
                s += 1;
            }
            if deficit[d].1 <= eps {
                d += 1;
            }
        }
    }
    ErrorGraph { edges }
}

/// True when no rotation along the graph's labeled edges saves latency.
pub fn check_no_negative_cycles(inst: &Instance, eg: &ErrorGraph) -> bool {
    let edges: Vec<LabeledEdge> =
        eg.edges.iter().map(|e| LabeledEdge { from: e.from, to: e.to, origin: e.origin }).collect();
    negative_labeled_cycle(inst, &edges, cycle_tolerance(inst)).is_none()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loadfn::LoadFunction;
    use crate::model::{check_kkt, Server};

    fn instance(n: Vec<f64>, lf: LoadFunction, c: Vec<Vec<f64>>) -> Instance {
        let servers = n.into_iter().enumerate().map(|(i, n)| Server::new(format!("s{i}"), n, lf.clone())).collect();
        Instance::new(servers, Matrix::from_rows(c).unwrap()).unwrap()
    }

    fn batch_fixture() -> Instance {
        instance(vec![10.0, 0.0], LoadFunction::batch(1.0, 20.0).unwrap(), vec![vec![0.0, 2.0], vec![2.0, 0.0]])
    }

    #[test]
    fn projection_onto_simplex() {
        assert_eq!(project_simplex(&[1.0, 1.0], 2.0), vec![1.0, 1.0]);
        assert_eq!(project_simplex(&[3.0, 0.0], 1.0), vec![1.0, 0.0]);
        let p = project_simplex(&[0.5, 0.2, -1.0], 1.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15 && p[2] == 0.0);
    }

    #[test]
    fn batch_fixture_optimum() {
        let inst = batch_fixture();
        let sol = solve_oracle(&inst).unwrap();
        assert!((sol.loads[0] - 6.0).abs() < 1e-8 && (sol.loads[1] - 4.0).abs() < 1e-8);
        assert!((sol.objective - 34.0).abs() < 1e-6);
        assert!(check_kkt(&inst, &sol.assignment, 1e-6).unwrap().passed());
    }

    #[test]
    fn single_server() {
        let inst = instance(vec![3.0], LoadFunction::batch(1.0, 5.0).unwrap(), vec![vec![0.0]]);
        assert_eq!(solve_oracle(&inst).unwrap().loads, vec![3.0]);
    }

    #[test]
    fn symmetric_queuing() {
        let inst = instance(vec![1.5, 0.0], LoadFunction::queuing(2.0, 1.9).unwrap(), vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        let sol = solve_oracle(&inst).unwrap();
        assert!((sol.loads[0] - 0.75).abs() < 1e-8 && (sol.loads[1] - 0.75).abs() < 1e-8);
    }

    #[test]
    fn binding_caps_need_chains() {
        // server 1 is full at the optimum; origin 0 should use it, origin 2 should not
        let c = vec![vec![0.0, 1.0, 9.0], vec![1.0, 0.0, 1.0], vec![9.0, 1.0, 0.0]];
        let servers = vec![
            Server::new("a", 6.0, LoadFunction::batch(1.0, 6.0).unwrap()),
            Server::new("b", 0.0, LoadFunction::batch(1.0, 2.0).unwrap()),
            Server::new("c", 6.0, LoadFunction::batch(1.0, 6.0).unwrap()),
        ];
        let inst = Instance::new(servers, Matrix::from_rows(c).unwrap()).unwrap();
        let a = solve_oracle(&inst).unwrap();
        // origin 2 fills server 1 on its own
        let mut start = OriginAssignment::identity(&inst);
        start.r[(2, 1)] = inst.cap(1);
        start.r[(2, 2)] = 6.0 - inst.cap(1);
        let b = solve_oracle_from(&inst, &start).unwrap();
        for i in 0..3 {
            assert!((a.loads[i] - b.loads[i]).abs() < 1e-6, "{:?} vs {:?}", a.loads, b.loads);
        }
        assert!((a.objective - b.objective).abs() < 1e-9);
    }

    #[test]
    fn rejects_large_instances() {
        let lf = LoadFunction::batch(1.0, 5.0).unwrap();
        let inst = instance(vec![1.0; 9], lf, vec![vec![0.0; 9]; 9]);
        assert_eq!(solve_oracle(&inst), Err(Error::CapExceeded { m: 9, cap: 8 }));
    }

    #[test]
    fn error_graph_examples() {
        let inst = batch_fixture();
        let state = OriginAssignment::identity(&inst);
        let opt = OriginAssignment::new(&inst, Matrix::from_rows(vec![vec![6.0, 4.0], vec![0.0, 0.0]]).unwrap()).unwrap();
        let eg = build_error_graph(&inst, &state, &opt);
        assert_eq!(eg.edges, vec![ErrorEdge { from: 0, to: 1, origin: 0, weight: 4.0 }]);
        assert_eq!(eg.apply(&state), opt);
        assert!(check_no_negative_cycles(&inst, &eg));
        assert!(build_error_graph(&inst, &opt, &opt).edges.is_empty());
    }

    #[test]
    fn opposite_imbalances_form_a_detectable_cycle() {
        let lf = LoadFunction::batch(1.0, 20.0).unwrap();
        let inst = instance(vec![5.0, 5.0], lf, vec![vec![0.0, 10.0], vec![10.0, 0.0]]);
        let swapped = OriginAssignment::new(&inst, Matrix::from_rows(vec![vec![0.0, 5.0], vec![5.0, 0.0]]).unwrap()).unwrap();
        let local = OriginAssignment::identity(&inst);
        let eg = build_error_graph(&inst, &swapped, &local);
        assert_eq!(eg.edges.len(), 2);
        assert!(!check_no_negative_cycles(&inst, &eg));
        assert!(check_no_negative_cycles(&inst, &ErrorGraph::default()));
    }
}
