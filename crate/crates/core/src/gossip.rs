//! Decentralized balancing by random pairwise exchanges.
//!
//! Each round one server picks a random partner and the two re-split every
//! origin's requests they hold between them, optimally for the pair. The
//! state is an [`OriginAssignment`] because the split depends on who owns
//! each request: moving requests of `k` from `i` to `j` costs `c_kj − c_ki`.
//! A pair can also trade through a third server whose load stays put, which
//! is the only way past a server sitting on a kink or at its cap.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::central::{build_finite_solution, default_argmin_tolerance, Status};
use crate::error::{Error, Result};
use crate::minimize::argmin_convex;
use crate::model::{check_feasible, objective, to_origin, Instance, OriginAssignment, Routing};

#[derive(Debug, Clone, PartialEq)]
pub struct GossipConfig {
    pub seed: u64,
    pub max_rounds: usize,
    /// Stop once the estimated absolute error is at most this.
    pub stop_error: f64,
    /// Rounds between error estimates; `None` means `m`.
    pub estimator_period: Option<usize>,
    pub argmin_tolerance: Option<f64>,
}

impl GossipConfig {
    pub fn new(seed: u64, max_rounds: usize) -> Self {
        GossipConfig { seed, max_rounds, stop_error: 0.0, estimator_period: None, argmin_tolerance: None }
    }

    pub fn stop_error(mut self, e: f64) -> Self {
        self.stop_error = e;
        self
    }

    pub fn estimator_period(mut self, rounds: usize) -> Self {
        self.estimator_period = Some(rounds);
        self
    }
}

/// Runtime upper bound on the distance to the optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEstimate {
    pub bound: f64,
    pub eps_star: f64,
    pub impr_sum: f64,
    pub impr_max: f64,
}

impl ErrorEstimate {
    /// Minimizes `A + B/ε + C·ε` over `ε > 0` where `A = 2m·Σ impr`,
    /// `B = max impr·(22U1 + 11·l_max·U2)·l_tot` and `C = (m+1)·l_tot`.
    pub fn from_improvements(inst: &Instance, impr_sum: f64, impr_max: f64) -> Self {
        let b = inst.bounds();
        Self::evaluate(inst.m(), inst.l_tot(), b.u1, b.u2, inst.l_max(), impr_sum, impr_max)
    }

    pub fn evaluate(m: usize, l_tot: f64, u1: f64, u2: f64, l_max: f64, impr_sum: f64, impr_max: f64) -> Self {
        let a = 2.0 * m as f64 * impr_sum;
        let b = impr_max * (22.0 * u1 + 11.0 * l_max * u2) * l_tot;
        let c = (m as f64 + 1.0) * l_tot;
        let (bound, eps_star) = if b > 0.0 && c > 0.0 {
            (a + 2.0 * (b * c).sqrt(), (b / c).sqrt())
        } else {
            (a, 0.0)
        };
        ErrorEstimate { bound, eps_star, impr_sum, impr_max }
    }
}

/// New contents of columns `i` and `j` after a pairwise exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct PairUpdate {
    pub i: usize,
    pub j: usize,
    pub col_i: Vec<f64>,
    pub col_j: Vec<f64>,
    /// Objective decrease; zero when the exchange was rejected.
    pub improvement: f64,
}

impl PairUpdate {
    pub fn apply(&self, state: &mut OriginAssignment) {
        for k in 0..state.r.dim() {
            state.r[(k, self.i)] = self.col_i[k];
            state.r[(k, self.j)] = self.col_j[k];
        }
    }
}

fn pair_cost(inst: &Instance, i: usize, j: usize, col_i: &[f64], col_j: &[f64]) -> f64 {
    let li: f64 = col_i.iter().sum();
    let lj: f64 = col_j.iter().sum();
    let latency: f64 = (0..inst.m()).map(|k| inst.c(k, i) * col_i[k] + inst.c(k, j) * col_j[k]).sum();
    inst.lf(i).h(li.max(0.0)) + inst.lf(j).h(lj.max(0.0)) + latency
}

/// Optimally re-splits between `i` and `j` all requests either of them holds.
///
/// Everything is first pooled on `i` (only virtually, so `i` may exceed its
/// limit in between). Origins are then visited by ascending `c_kj − c_ki`
/// and each moves the amount of its requests to `j` that minimizes the pair's
/// cost. While the pool still overloads `i`, the cheapest origins are forced
/// to move at least the excess.
pub fn calc_best_transfer(inst: &Instance, state: &OriginAssignment, i: usize, j: usize, tol: f64) -> Result<PairUpdate> {
    let m = inst.m();
    if i == j || i >= m || j >= m {
        return Err(Error::InvalidParameter(format!("calc_best_transfer needs two distinct servers, got ({i}, {j})")));
    }
    let old_i: Vec<f64> = state.r.column(i).collect();
    let old_j: Vec<f64> = state.r.column(j).collect();
    let mut col_i: Vec<f64> = old_i.iter().zip(&old_j).map(|(a, b)| a + b).collect();
    let mut col_j = vec![0.0; m];
    let mut li: f64 = col_i.iter().sum();
    let mut lj = 0.0;

    let mut order: Vec<usize> = (0..m).filter(|&k| col_i[k] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let da = inst.c(a, j) - inst.c(a, i);
        let db = inst.c(b, j) - inst.c(b, i);
        da.total_cmp(&db).then(a.cmp(&b))
    });

    let (fi, fj) = (inst.lf(i), inst.lf(j));
    let (cap_i, cap_j) = (inst.cap(i), inst.cap(j));
    for k in order {
        let extra = inst.c(k, j) - inst.c(k, i);
        let upper = col_i[k].min(cap_j - lj).max(0.0);
        let lower = (li - cap_i).max(0.0).min(upper);
        let (l0, l1) = (li, lj);
        let moved = argmin_convex(
            |d| fi.h((l0 - d).max(0.0)) + fj.h(l1 + d) + extra * d,
            |d| -inst.marginal_out(i, l0 - d) + inst.marginal_in(j, l1 + d) + extra,
            lower,
            upper,
            tol,
        );
        if moved > 0.0 {
            col_i[k] = if moved == col_i[k] { 0.0 } else { col_i[k] - moved };
            col_j[k] += moved;
            li -= moved;
            lj += moved;
        }
    }
    if li > inst.lf(i).l_max() + inst.slack() {
        return Err(Error::PoolOverload { i, j });
    }

    let before = pair_cost(inst, i, j, &old_i, &old_j);
    let after = pair_cost(inst, i, j, &col_i, &col_j);
    if after <= before {
        Ok(PairUpdate { i, j, col_i, col_j, improvement: before - after })
    } else {
        // The bisection tolerance can make a near-optimal pair marginally worse.
        Ok(PairUpdate { i, j, col_i: old_i, col_j: old_j, improvement: 0.0 })
    }
}

/// Trades requests through third servers.
///
/// For each other server `k`, the sender passes `k` requests of any origin
/// it processes, and `k` hands as many requests of any origin to the
/// receiver. The load of `k` stays put, so the pair needs only the list of
/// origins `k` serves, not its load function. This is what moves load when a
/// server in between sits on a kink or at its cap, where no exchange between
/// `i` and `j` alone helps. Returns the objective decrease.
pub fn swap_at_third_servers(inst: &Instance, state: &mut OriginAssignment, i: usize, j: usize, tol: f64) -> f64 {
    let m = inst.m();
    let mut gained = 0.0;
    for k in (0..m).filter(|&k| k != i && k != j) {
        for (from, to) in [(i, j), (j, i)] {
            for a in 0..m {
                for b in 0..m {
                    let (l_from, l_to) = (state.load(from), state.load(to));
                    let upper = state.r[(a, from)].min(state.r[(b, k)]).min(inst.cap(to) - l_to).max(0.0);
                    if a == b || upper <= 0.0 {
                        // a == b is a plain exchange between the pair
                        continue;
                    }
                    let extra = inst.c(a, k) - inst.c(a, from) + inst.c(b, to) - inst.c(b, k);
                    if inst.marginal_out(from, l_from) - inst.marginal_in(to, l_to) - extra <= 0.0 {
                        continue;
                    }
                    let (f_from, f_to) = (inst.lf(from), inst.lf(to));
                    let cost = |d: f64| f_from.h((l_from - d).max(0.0)) + f_to.h(l_to + d) + extra * d;
                    let moved = argmin_convex(
                        cost,
                        |d| -inst.marginal_out(from, l_from - d) + inst.marginal_in(to, l_to + d) + extra,
                        0.0,
                        upper,
                        tol,
                    );
                    let gain = cost(0.0) - cost(moved);
                    if moved > 0.0 && gain > 0.0 {
                        let take = |x: f64| if x > moved { x - moved } else { 0.0 };
                        state.r[(a, from)] = take(state.r[(a, from)]);
                        state.r[(a, k)] += moved;
                        state.r[(b, k)] = take(state.r[(b, k)]);
                        state.r[(b, to)] += moved;
                        gained += gain;
                    }
                }
            }
        }
    }
    gained
}

/// One round: a uniformly random initiator balances with a uniformly random
/// other server, trades at third servers, and balances again if that moved
/// anything. Returns the pair and the improvement.
pub fn gossip_round(inst: &Instance, state: &mut OriginAssignment, rng: &mut impl Rng, tol: f64) -> Result<(usize, usize, f64)> {
    let m = inst.m();
    if m < 2 {
        return Err(Error::TooFewServers);
    }
    let i = rng.random_range(0..m);
    let mut j = rng.random_range(0..m - 1);
    if j >= i {
        j += 1;
    }
    let improvement = pair_step(inst, state, i, j, tol)?;
    Ok((i, j, improvement))
}

/// Everything a round does once the pair is drawn. Returns the improvement.
fn pair_step(inst: &Instance, state: &mut OriginAssignment, i: usize, j: usize, tol: f64) -> Result<f64> {
    let update = calc_best_transfer(inst, state, i, j, tol)?;
    update.apply(state);
    let mut improvement = update.improvement;
    let swapped = swap_at_third_servers(inst, state, i, j, tol);
    if swapped > 0.0 {
        let again = calc_best_transfer(inst, state, i, j, tol)?;
        again.apply(state);
        improvement += swapped + again.improvement;
    }
    Ok(improvement)
}

/// Estimates the current error from the improvement a round would make on
/// every ordered pair. Swaps at third servers count too: a server on a kink
/// can block every plain exchange while the state is still off the optimum.
pub fn error_estimate(inst: &Instance, state: &OriginAssignment) -> Result<ErrorEstimate> {
    error_estimate_with(inst, state, default_argmin_tolerance(inst))
}

fn error_estimate_with(inst: &Instance, state: &OriginAssignment, tol: f64) -> Result<ErrorEstimate> {
    check_feasible(inst, &state.loads())?;
    let m = inst.m();
    let (mut sum, mut max) = (0.0, 0.0f64);
    for p in 0..m {
        for q in 0..m {
            if p != q {
                let impr = pair_step(inst, &mut state.clone(), p, q, tol)?;
                sum += impr;
                max = max.max(impr);
            }
        }
    }
    Ok(ErrorEstimate::from_improvements(inst, sum, max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GossipRecord {
    pub round: usize,
    /// `None` for the record of the starting state.
    pub pair: Option<(usize, usize)>,
    pub objective: f64,
    pub improvement: f64,
    pub estimate: Option<ErrorEstimate>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GossipTrace {
    pub records: Vec<GossipRecord>,
}

impl GossipTrace {
    pub const CSV_HEADER: &'static str = "round,initiator,partner,objective,impr,estimate_bound";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let (a, b) = r.pair.map(|(a, b)| (a.to_string(), b.to_string())).unwrap_or_default();
            let bound = r.estimate.map(|e| e.bound.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{},{}", r.round, a, b, r.objective, r.improvement, bound);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GossipOutcome {
    pub state: OriginAssignment,
    pub trace: GossipTrace,
    pub status: Status,
    pub rounds: usize,
    pub last_estimate: ErrorEstimate,
}

/// Everything local when that fits, else a feasible spill of the overflow.
pub fn initial_assignment(inst: &Instance) -> Result<OriginAssignment> {
    let identity = OriginAssignment::identity(inst);
    if (0..inst.m()).all(|i| inst.own_load(i) <= inst.cap(i)) {
        return Ok(identity);
    }
    to_origin(inst, &build_finite_solution(inst)?)
}

/// Runs rounds until the estimated error drops to `stop_error` or the round
/// budget is spent. The same seed always yields the same trace.
pub fn run_gossip(inst: &Instance, cfg: &GossipConfig) -> Result<GossipOutcome> {
    let m = inst.m();
    if cfg.max_rounds == 0 {
        return Err(Error::InvalidParameter("max_rounds must be at least 1".into()));
    }
    if !(cfg.stop_error >= 0.0) {
        return Err(Error::InvalidParameter(format!("stop error must be nonnegative, got {}", cfg.stop_error)));
    }
    let period = cfg.estimator_period.unwrap_or(m).max(1);
    let tol = cfg.argmin_tolerance.unwrap_or_else(|| default_argmin_tolerance(inst));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = initial_assignment(inst)?;

    let mut estimate = error_estimate_with(inst, &state, tol)?;
    let mut trace = GossipTrace {
        records: vec![GossipRecord {
            round: 0,
            pair: None,
            objective: objective(inst, &state)?,
            improvement: 0.0,
            estimate: Some(estimate),
        }],
    };
    if m < 2 || estimate.bound <= cfg.stop_error {
        return Ok(GossipOutcome { state, trace, status: Status::Converged, rounds: 0, last_estimate: estimate });
    }

    let mut round = 0;
    let status = loop {
        if round >= cfg.max_rounds {
            break Status::BudgetExceeded;
        }
        round += 1;
        let (i, j, improvement) = gossip_round(inst, &mut state, &mut rng, tol)?;
        let fresh = if round % period == 0 || round == cfg.max_rounds {
            estimate = error_estimate_with(inst, &state, tol)?;
            Some(estimate)
        } else {
            None
        };
        trace.records.push(GossipRecord {
            round,
            pair: Some((i, j)),
            objective: objective(inst, &state)?,
            improvement,
            estimate: fresh,
        });
        if fresh.is_some_and(|e| e.bound <= cfg.stop_error) {
            break Status::Converged;
        }
    };
    Ok(GossipOutcome { state, trace, status, rounds: round, last_estimate: estimate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loadfn::LoadFunction;
    use crate::matrix::Matrix;
    use crate::model::Server;

    fn instance(n: Vec<f64>, lf: LoadFunction, c: Vec<Vec<f64>>) -> Instance {
        let servers = n.into_iter().enumerate().map(|(i, n)| Server::new(format!("s{i}"), n, lf.clone())).collect();
        Instance::new(servers, Matrix::from_rows(c).unwrap()).unwrap()
    }

    fn batch() -> LoadFunction {
        LoadFunction::batch(1.0, 20.0).unwrap()
    }

    fn assignment(inst: &Instance, rows: Vec<Vec<f64>>) -> OriginAssignment {
        OriginAssignment::new(inst, Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn relayed_requests_split_evenly() {
        // origin 0 relayed 10 to server 1; servers 1 and 2 are equally far
        let inst = instance(vec![10.0, 0.0, 0.0], batch(), vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 2.0], vec![1.0, 2.0, 0.0]]);
        let state = assignment(&inst, vec![vec![0.0, 10.0, 0.0], vec![0.0; 3], vec![0.0; 3]]);
        let up = calc_best_transfer(&inst, &state, 1, 2, 1e-12).unwrap();
        assert!((up.col_i[0] - 5.0).abs() < 1e-9 && (up.col_j[0] - 5.0).abs() < 1e-9);
        assert!((up.improvement - 25.0).abs() < 1e-8);
    }

    #[test]
    fn origins_are_processed_by_latency_difference() {
        // i = 1 owns 6, origin 0 relayed 4 to i
        let inst = instance(vec![4.0, 6.0, 0.0], batch(), vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 2.0], vec![1.0, 2.0, 0.0]]);
        let state = assignment(&inst, vec![vec![0.0, 4.0, 0.0], vec![0.0, 6.0, 0.0], vec![0.0; 3]]);
        let up = calc_best_transfer(&inst, &state, 1, 2, 1e-12).unwrap();
        assert!((up.col_j[0] - 4.0).abs() < 1e-9);
        assert!(up.col_j[1].abs() < 1e-9);
        assert!((up.col_i[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn prohibitive_latency_keeps_everything() {
        let inst = instance(vec![3.0, 0.0], batch(), vec![vec![0.0, 100.0], vec![100.0, 0.0]]);
        let state = OriginAssignment::identity(&inst);
        let up = calc_best_transfer(&inst, &state, 0, 1, 1e-12).unwrap();
        assert_eq!(up.col_i, vec![3.0, 0.0]);
        assert_eq!(up.improvement, 0.0);
    }

    #[test]
    fn pooling_respects_the_cap() {
        // server 1 is nearly full and server 0 can only take 5
        let lf_small = LoadFunction::batch(1.0, 5.0).unwrap();
        let servers = vec![Server::new("a", 0.0, lf_small), Server::new("b", 9.0, LoadFunction::batch(1.0, 10.0).unwrap())];
        let inst = Instance::new(servers, Matrix::from_rows(vec![vec![0.0, 50.0], vec![50.0, 0.0]]).unwrap()).unwrap();
        let state = OriginAssignment::identity(&inst);
        // pooled on server 0 gives 9 > 5, so 4 of it must end up back on server 1
        let up = calc_best_transfer(&inst, &state, 0, 1, 1e-12).unwrap();
        let l0: f64 = up.col_i.iter().sum();
        assert!(l0 <= inst.cap(0));
        assert_eq!(up.improvement, 0.0);
    }

    #[test]
    fn first_round_of_the_batch_fixture_is_optimal() {
        let inst = instance(vec![10.0, 0.0], batch(), vec![vec![0.0, 2.0], vec![2.0, 0.0]]);
        for seed in 0..4 {
            let mut state = OriginAssignment::identity(&inst);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (_, _, impr) = gossip_round(&inst, &mut state, &mut rng, 1e-12).unwrap();
            assert!((impr - 16.0).abs() < 1e-8);
            assert!((state.load(0) - 6.0).abs() < 1e-9);
            let (_, _, again) = gossip_round(&inst, &mut state, &mut rng, 1e-12).unwrap();
            assert_eq!(again, 0.0);
        }
    }

    #[test]
    fn single_server_has_no_partner() {
        let inst = instance(vec![1.0], batch(), vec![vec![0.0]]);
        let mut state = OriginAssignment::identity(&inst);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(gossip_round(&inst, &mut state, &mut rng, 1e-12), Err(Error::TooFewServers));
    }

    #[test]
    fn estimate_closed_form() {
        let e = ErrorEstimate::evaluate(2, 10.0, 0.5, 0.0, 20.0, 0.03, 0.03);
        assert!((e.bound - (0.12 + 2.0 * 99f64.sqrt())).abs() < 1e-12);
        assert!((e.eps_star - 0.11f64.sqrt()).abs() < 1e-12);
        let zero = ErrorEstimate::evaluate(2, 10.0, 0.5, 0.0, 20.0, 0.0, 0.0);
        assert_eq!(zero.bound, 0.0);
    }

    #[test]
    fn runs_the_fixtures() {
        let inst = instance(vec![10.0, 0.0], batch(), vec![vec![0.0, 2.0], vec![2.0, 0.0]]);
        let out = run_gossip(&inst, &GossipConfig::new(7, 100).stop_error(1e-3)).unwrap();
        assert_eq!(out.status, Status::Converged);
        assert!((objective(&inst, &out.state).unwrap() - 34.0).abs() < 1e-3);

        let inst = instance(vec![1.5, 0.0], LoadFunction::queuing(2.0, 1.9).unwrap(), vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        let out = run_gossip(&inst, &GossipConfig::new(7, 100).stop_error(1e-9)).unwrap();
        assert!((out.state.load(0) - 0.75).abs() < 1e-4 && (out.state.load(1) - 0.75).abs() < 1e-4);
    }

    #[test]
    fn traces_are_reproducible() {
        let c = vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.5], vec![2.0, 1.5, 0.0]];
        let inst = instance(vec![5.0, 1.0, 0.0], LoadFunction::queuing(4.0, 3.9).unwrap(), c);
        let cfg = GossipConfig::new(42, 50);
        let a = run_gossip(&inst, &cfg).unwrap().trace.to_csv();
        let b = run_gossip(&inst, &cfg).unwrap().trace.to_csv();
        assert_eq!(a, b);
        assert!(a.starts_with("round,initiator,partner,objective,impr,estimate_bound\n0,,,"));
    }
}
