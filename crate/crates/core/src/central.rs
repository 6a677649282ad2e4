//! Centralized any-time solver over edge flows.
//!
//! Starting from any feasible state, the solver repeatedly picks the pair of
//! servers with the largest marginal imbalance `Δ_ij`, shifts load between
//! them, and then hands back load on any edge whose receiver became more
//! expensive than its sender. Once `max Δ ≤ e / (l_tot·m)` it re-solves the
//! transfers as a min-cost flow and checks residual paths as well, since a
//! server on a kink or at its cap can hide an imbalance from the pairwise
//! test. When no path gains more than `e / (l_tot·m)` either, the distance to
//! the optimum is at most `e`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::flow::optimize_network_flow;
use crate::matrix::Matrix;
use crate::minimize::{argmin_convex, prefer_kinks};
use crate::model::{
    delta_matrix, edge_is_balanced, load_gap, objective, path_gap, residual_backward, topological_order, EdgeFlowState, Instance, PathGap, Routing,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CentralConfig {
    /// Required error; absolute unless `relative` is set.
    pub target_error: f64,
    /// Interpret `target_error` as a fraction of the total load.
    pub relative: bool,
    /// Re-solve the network flow after every improvement.
    pub flow_every_iteration: bool,
    pub max_iterations: usize,
    /// Load tolerance of the pairwise minimizations; defaults to `1e-10·l_tot`.
    pub argmin_tolerance: Option<f64>,
}

impl CentralConfig {
    pub fn new(target_error: f64) -> Self {
        CentralConfig {
            target_error,
            relative: false,
            flow_every_iteration: false,
            max_iterations: 100_000,
            argmin_tolerance: None,
        }
    }

    pub fn relative(mut self, relative: bool) -> Self {
        self.relative = relative;
        self
    }

    pub fn flow_every_iteration(mut self, on: bool) -> Self {
        self.flow_every_iteration = on;
        self
    }

    pub fn max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn absolute_target(&self, inst: &Instance) -> f64 {
        if self.relative {
            self.target_error * inst.l_tot()
        } else {
            self.target_error
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.target_error > 0.0) {
            return Err(Error::InvalidParameter(format!("target error must be positive, got {}", self.target_error)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn default_argmin_tolerance(inst: &Instance) -> f64 {
    1e-10 * inst.l_tot().max(1.0)
}

/// The default, tightened so that one move can resolve marginal differences
/// of `threshold`: `g` changes by at most `2·U1 + l_max·U2` per unit of load.
fn central_tolerance(inst: &Instance, threshold: f64) -> f64 {
    let b = inst.bounds();
    let curvature = 2.0 * b.u1 + inst.l_max() * b.u2;
    let floor = 1e-15 * inst.l_tot().max(1.0);
    let mut tol = default_argmin_tolerance(inst);
    if curvature > 0.0 && threshold.is_finite() {
        tol = tol.min(threshold / (4.0 * curvature));
    }
    tol.max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub objective: f64,
    /// Largest gain along a residual path of a min-cost flow for these loads.
    /// Never below `max Δ`; the two agree unless a server sits on a kink or
    /// at its cap.
    pub max_delta: f64,
    pub bound_e: f64,
    pub moved_load: f64,
    pub pair: Option<(usize, usize)>,
    /// The transfers were just re-solved as a min-cost flow and every edge
    /// then passed the hand-back test.
    pub flow_optimized: bool,
    /// Every edge in use passes the hand-back test.
    pub edges_balanced: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub const CSV_HEADER: &'static str = "iteration,objective,max_delta,bound_e,moved_load,pair_i,pair_j";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let (pi, pj) = match r.pair {
                Some((i, j)) => (i.to_string(), j.to_string()),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iteration, r.objective, r.max_delta, r.bound_e, r.moved_load, pi, pj
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    BudgetExceeded,
    /// No move makes progress at the minimization tolerance, yet the target
    /// is not met; a smaller `argmin_tolerance` may help.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralOutcome {
    pub state: EdgeFlowState,
    pub trace: Trace,
    pub status: Status,
    pub iterations: usize,
}

/// Keeps what fits locally and waterfills the overflow to servers with spare
/// capacity, nearest first.
pub fn build_finite_solution(inst: &Instance) -> Result<EdgeFlowState> {
    let m = inst.m();
    let capacity: f64 = (0..m).map(|i| inst.lf(i).l_max()).sum();
    if capacity < inst.l_tot() {
        return Err(Error::Overloaded { l_tot: inst.l_tot(), capacity });
    }
    let mut loads: Vec<f64> = (0..m).map(|i| inst.own_load(i).min(inst.cap(i))).collect();
    let mut r = Matrix::zeros(m);
    let spill = |limit: &dyn Fn(usize) -> f64, loads: &mut Vec<f64>, r: &mut Matrix| {
        for i in 0..m {
            let mut overflow = inst.own_load(i) - loads[i] - r.row(i).iter().sum::<f64>() + r.column(i).sum::<f64>();
            if overflow <= 0.0 {
                continue;
            }
            let mut targets: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            targets.sort_by(|&a, &b| inst.c(i, a).total_cmp(&inst.c(i, b)).then(a.cmp(&b)));
            for j in targets {
                let spare = limit(j) - loads[j];
                if spare <= 0.0 {
                    continue;
                }
                let moved = spare.min(overflow);
                loads[j] += moved;
                r[(i, j)] += moved;
                overflow -= moved;
                if overflow <= 0.0 {
                    break;
                }
            }
        }
    };
    spill(&|j| inst.cap(j), &mut loads, &mut r);
    // The cap margin can leave a sliver unplaced when capacity is exactly tight.
    spill(&|j| inst.lf(j).l_max(), &mut loads, &mut r);
    cancel_directed_cycles(&mut r);
    let state = EdgeFlowState::from_transfers(inst, r)?;
    for (i, l) in state.loads.iter().enumerate() {
        if *l > inst.lf(i).l_max() + inst.slack() {
            return Err(Error::Overloaded { l_tot: inst.l_tot(), capacity });
        }
    }
    Ok(state)
}

fn pair_argmin(inst: &Instance, from: usize, to: usize, l_from: f64, l_to: f64, latency: f64, hi: f64, tol: f64) -> f64 {
    let f_from = inst.lf(from);
    let f_to = inst.lf(to);
    let cost = |d: f64| f_from.h((l_from - d).max(0.0)) + f_to.h(l_to + d) + latency * d;
    let dr = |d: f64| -inst.marginal_out(from, l_from - d) + inst.marginal_in(to, l_to + d) + latency;
    let dl = |d: f64| -inst.marginal_in(from, l_from - d) + inst.marginal_out(to, l_to + d) + latency;
    let d = argmin_convex(cost, dr, 0.0, hi, tol);
    let kinks = f_from.kinks_near(l_from - d).map(|p| l_from - p).chain(f_to.kinks_near(l_to + d).map(|p| p - l_to));
    prefer_kinks(dl, dr, d, 0.0, hi, kinks)
}

/// Moves the best amount of load from `i` to `j` over edge `i → j`.
///
/// Minimizes `h_i(l_i − Δ) + h_j(l_j + Δ) + Δ·c_ij` over
/// `Δ ∈ [0, min(l_i, cap_j − l_j)]`. Any opposite transfer `j → i` is netted
/// out. Returns the amount moved.
pub fn adjust(inst: &Instance, state: &mut EdgeFlowState, i: usize, j: usize, tol: f64) -> f64 {
    assert_ne!(i, j, "adjust needs two distinct servers");
    let (li, lj) = (state.loads[i], state.loads[j]);
    let hi = li.min(inst.cap(j) - lj).max(0.0);
    let moved = pair_argmin(inst, i, j, li, lj, inst.c(i, j), hi, tol);
    if moved > 0.0 {
        state.loads[i] = if moved == li { 0.0 } else { li - moved };
        state.loads[j] = lj + moved;
        state.r[(i, j)] += moved;
        let both = state.r[(i, j)].min(state.r[(j, i)]);
        if both > 0.0 {
            state.r[(i, j)] -= both;
            state.r[(j, i)] -= both;
        }
    }
    moved
}

/// Returns load previously sent over `k → ell` back to `k`, refunding latency.
///
/// Minimizes `h_ell(l_ell − Δ) + h_k(l_k + Δ) − Δ·c_k,ell` over
/// `Δ ∈ [0, min(r_k,ell, l_ell, cap_k − l_k)]`.
pub fn adjust_back(inst: &Instance, state: &mut EdgeFlowState, ell: usize, k: usize, tol: f64) -> Result<f64> {
    let sent = state.r[(k, ell)];
    if k == ell || sent <= 0.0 {
        return Err(Error::NoEdge { from: k, to: ell });
    }
    let (l_ell, l_k) = (state.loads[ell], state.loads[k]);
    let hi = sent.min(l_ell).min(inst.cap(k) - l_k).max(0.0);
    let moved = pair_argmin(inst, ell, k, l_ell, l_k, -inst.c(k, ell), hi, tol);
    if moved > 0.0 {
        state.loads[ell] = if moved == l_ell { 0.0 } else { l_ell - moved };
        state.loads[k] = l_k + moved;
        state.r[(k, ell)] = if moved == sent { 0.0 } else { sent - moved };
    }
    Ok(moved)
}

/// Moves the best amount of load along a residual path, growing forward
/// transfers and shrinking the ones it runs against. Returns the amount moved.
pub fn shift_along(inst: &Instance, state: &mut EdgeFlowState, gap: &PathGap, tol: f64) -> f64 {
    let (Some(&a), Some(&b)) = (gap.path.first(), gap.path.last()) else { return 0.0 };
    if a == b {
        return 0.0;
    }
    let backward: Vec<bool> = gap.path.windows(2).map(|w| residual_backward(inst, &state.r, w[0], w[1])).collect();
    let mut hi = state.loads[a].min(inst.cap(b) - state.loads[b]).max(0.0);
    for (w, &back) in gap.path.windows(2).zip(&backward) {
        if back {
            hi = hi.min(state.r[(w[1], w[0])]);
        }
    }
    let (la, lb) = (state.loads[a], state.loads[b]);
    let moved = pair_argmin(inst, a, b, la, lb, gap.latency, hi, tol);
    if moved > 0.0 {
        for (w, &back) in gap.path.windows(2).zip(&backward) {
            let (u, v) = (w[0], w[1]);
            if back {
                let left = state.r[(v, u)] - moved;
                state.r[(v, u)] = if left > 0.0 { left } else { 0.0 };
            } else {
                state.r[(u, v)] += moved;
            }
        }
        state.loads[a] = if moved == la { 0.0 } else { la - moved };
        state.loads[b] = lb + moved;
    }
    moved
}

/// Cancels directed cycles among positive transfers; loads are unchanged and
/// latency only drops.
fn cancel_directed_cycles(r: &mut Matrix) {
    while topological_order(r).is_none() {
        let Some(cycle) = directed_cycle(r) else { return };
        let amount = cycle
            .windows(2)
            .map(|w| r[(w[0], w[1])])
            .fold(f64::INFINITY, f64::min);
        for w in cycle.windows(2) {
            r[(w[0], w[1])] -= amount;
            if r[(w[0], w[1])] <= 0.0 {
                r[(w[0], w[1])] = 0.0;
            }
        }
    }
}

/// A closed walk `v0, v1, ..., v0` over positive transfers.
fn directed_cycle(r: &Matrix) -> Option<Vec<usize>> {
    let m = r.dim();
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut color = vec![0u8; m];
    let mut stack: Vec<usize> = Vec::new();
    fn visit(u: usize, r: &Matrix, color: &mut [u8], stack: &mut Vec<usize>) -> Option<Vec<usize>> {
        color[u] = 1;
        stack.push(u);
        for v in 0..r.dim() {
            if v == u || r[(u, v)] <= 0.0 {
                continue;
            }
            if color[v] == 1 {
                let start = stack.iter().position(|x| *x == v)?;
                let mut cycle = stack[start..].to_vec();
                cycle.push(v);
                return Some(cycle);
            }
            if color[v] == 0 {
                if let Some(c) = visit(v, r, color, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        color[u] = 2;
        None
    }
    (0..m).find_map(|s| if color[s] == 0 { visit(s, r, &mut color, &mut stack) } else { None })
}

/// Result of one improvement step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Improvement {
    pub moved: f64,
    pub handed_back: f64,
}

/// Balances `i → j`, then hands back load on every edge `k → ell` where
/// `g_ell + c_k,ell > g_k + tau_kkt`, visiting receivers in topological order
/// until no edge is left unbalanced.
pub fn improve(inst: &Instance, state: &mut EdgeFlowState, i: usize, j: usize, tol: f64, tau_kkt: f64) -> Improvement {
    let moved = adjust(inst, state, i, j, tol);
    let handed_back = hand_back(inst, state, tol, tau_kkt);
    Improvement { moved, handed_back }
}

/// Neighbouring edges undo part of each other's correction, so passes
/// contract geometrically rather than finishing in a fixed number.
const HAND_BACK_PASSES: usize = 1000;

/// Repeats hand-back passes until every edge in use is balanced.
fn hand_back(inst: &Instance, state: &mut EdgeFlowState, tol: f64, tau_kkt: f64) -> f64 {
    let m = inst.m();
    cancel_directed_cycles(&mut state.r);
    let mut handed_back = 0.0;
    for _ in 0..HAND_BACK_PASSES {
        let order = topological_order(&state.r).expect("cycles were cancelled");
        let mut changed = false;
        for &ell in &order {
            for k in 0..m {
                if k == ell || state.r[(k, ell)] <= 0.0 {
                    continue;
                }
                if !edge_is_balanced(inst, &state.loads, k, ell, tau_kkt) {
                    let back = adjust_back(inst, state, ell, k, tol).unwrap_or(0.0);
                    if back > 0.0 {
                        handed_back += back;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    handed_back
}

/// Alternates min-cost flow and hand-back passes until the transfers are an
/// optimal flow whose edges are all balanced, which is when the error bound
/// applies. Returns the load handed back and whether that state was reached.
fn settle(inst: &Instance, state: &mut EdgeFlowState, tol: f64, tau_kkt: f64) -> Result<(f64, bool)> {
    let mut total = 0.0;
    for _ in 0..SETTLE_ROUNDS {
        reoptimize_flow(inst, state)?;
        let moved = hand_back(inst, state, tol, tau_kkt);
        if moved == 0.0 {
            return Ok((total, true));
        }
        total += moved;
    }
    Ok((total, false))
}

const SETTLE_ROUNDS: usize = 64;

/// Replaces the transfers by a min-cost flow realizing the same loads, unless
/// that would not lower latency.
pub fn reoptimize_flow(inst: &Instance, state: &mut EdgeFlowState) -> Result<()> {
    let solution = optimize_network_flow(inst, &state.loads)?;
    if solution.total_cost <= state.communication_cost(inst) {
        state.r = solution.flow;
    }
    Ok(())
}

fn record(
    inst: &Instance,
    state: &EdgeFlowState,
    iteration: usize,
    moved_load: f64,
    pair: Option<(usize, usize)>,
    flow_optimized: bool,
    tau_kkt: f64,
) -> Result<TraceRecord> {
    let gap = load_gap(inst, &state.loads)?.value;
    let edges_balanced = state
        .transfers()
        .iter()
        .all(|&(k, ell, _)| edge_is_balanced(inst, &state.loads, k, ell, tau_kkt));
    Ok(TraceRecord {
        iteration,
        objective: objective(inst, state)?,
        max_delta: gap,
        bound_e: inst.l_tot() * inst.m() as f64 * gap,
        moved_load,
        pair,
        flow_optimized,
        edges_balanced,
    })
}

/// Runs the centralized solver until the certified error is within the target.
pub fn solve_central(inst: &Instance, cfg: &CentralConfig) -> Result<CentralOutcome> {
    cfg.validate()?;
    let m = inst.m();
    let target = cfg.absolute_target(inst);
    let scale = inst.l_tot() * m as f64;
    let threshold = if scale > 0.0 { target / scale } else { f64::INFINITY };
    let tol = cfg.argmin_tolerance.unwrap_or_else(|| central_tolerance(inst, threshold));
    let tau_kkt = threshold / 10.0;

    let mut state = build_finite_solution(inst)?;
    let (_, settled) = settle(inst, &mut state, tol, tau_kkt)?;
    let mut trace = Trace { records: vec![record(inst, &state, 0, 0.0, None, settled, tau_kkt)?] };

    let mut iterations = 0;
    let mut settled_now = settled;
    let mut last_pair = None;
    let status = loop {
        let report = delta_matrix(inst, &state.loads)?;
        if let Some((i, j)) = report.argmax.filter(|_| report.max_delta > threshold) {
            if iterations >= cfg.max_iterations {
                break Status::BudgetExceeded;
            }
            iterations += 1;
            if last_pair == Some((i, j)) && !settled_now {
                // The pair came back, so hand-back returned the load through a
                // relay; a min-cost flow reroutes it directly.
                last_pair = None;
                let (moved, ok) = settle(inst, &mut state, tol, tau_kkt)?;
                settled_now = ok;
                trace.records.push(record(inst, &state, iterations, moved, None, ok, tau_kkt)?);
                continue;
            }
            last_pair = Some((i, j));
            let step = improve(inst, &mut state, i, j, tol, tau_kkt);
            if step.moved == 0.0 && step.handed_back == 0.0 {
                // nothing changed, so the next pass would pick the same pair
                break Status::Stalled;
            }
            settled_now = false;
            if cfg.flow_every_iteration {
                settled_now = settle(inst, &mut state, tol, tau_kkt)?.1;
            }
            trace.records.push(record(inst, &state, iterations, step.moved, Some((i, j)), settled_now, tau_kkt)?);
            continue;
        }
        if !settled_now {
            // The bound needs an optimal flow with balanced edges; settling may
            // hand load back and reopen an imbalance.
            let (moved, ok) = settle(inst, &mut state, tol, tau_kkt)?;
            settled_now = ok;
            if moved > 0.0 || !ok {
                iterations += 1;
                trace.records.push(record(inst, &state, iterations, moved, None, ok, tau_kkt)?);
            } else {
                let last = trace.records.last_mut().expect("trace starts with a record");
                *last = record(inst, &state, last.iteration, last.moved_load, last.pair, true, tau_kkt)?;
            }
            if iterations >= cfg.max_iterations && !(ok && moved == 0.0) {
                break Status::BudgetExceeded;
            }
            continue;
        }
        // Direct pairs are balanced, but a server on a kink or at its cap can
        // still hide an imbalance between the servers it trades with.
        let gap = path_gap(inst, &state.loads, &state.r)?;
        if gap.value <= threshold {
            break Status::Converged;
        }
        if iterations >= cfg.max_iterations {
            break Status::BudgetExceeded;
        }
        iterations += 1;
        let moved = shift_along(inst, &mut state, &gap, tol);
        if moved == 0.0 {
            break Status::Stalled;
        }
        settled_now = settle(inst, &mut state, tol, tau_kkt)?.1;
        let ends = (gap.path[0], *gap.path.last().expect("gap has a path"));
        trace.records.push(record(inst, &state, iterations, moved, Some(ends), settled_now, tau_kkt)?);
    };
    Ok(CentralOutcome { state, trace, status, iterations })
}
