//! Problem instances, routing states and optimality diagnostics.
//!
//! Two state representations are used throughout the crate:
//!
//! * [`EdgeFlowState`]: `r[i][j]` is the load forwarded over the link `i → j`.
//!   Requests may traverse several links, so this is the multi-hop view used by
//!   the centralized solver.
//! * [`OriginAssignment`]: `r[k][i]` is the number of requests owned by `k`
//!   that are executed on `i`. This is the single-hop view maintained by the
//!   gossip protocol.
//!
//! Both implement [`Routing`], which is all the diagnostics need.

use crate::error::{Error, Result};
use crate::loadfn::{DerivativeBounds, LoadFunction};
use crate::matrix::Matrix;

/// Relative margin kept below each server's `l_max`.
pub const CAP_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Server {
    pub id: String,
    /// Local (own) load.
    pub n: f64,
    pub load_function: LoadFunction,
}

impl Server {
    pub fn new(id: impl Into<String>, n: f64, load_function: LoadFunction) -> Self {
        Server { id: id.into(), n, load_function }
    }
}

/// Servers with their own loads and load functions, plus the latency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    servers: Vec<Server>,
    latency: Matrix,
    l_tot: f64,
}

impl Instance {
    /// Validates and builds an instance, reporting every broken invariant at once.
    pub fn new(servers: Vec<Server>, latency: Matrix) -> Result<Self> {
        let m = servers.len();
        let mut problems = Vec::new();
        if m == 0 {
            problems.push("at least one server is required".to_string());
        }
        if latency.dim() != m {
            problems.push(format!("latency matrix is {0}x{0} but there are {m} servers", latency.dim()));
        } else {
            for i in 0..m {
                if latency[(i, i)] != 0.0 {
                    problems.push(format!("latency[{i}][{i}] = {}: diagonal must be zero", latency[(i, i)]));
                }
                for j in 0..m {
                    let c = latency[(i, j)];
                    if !(c.is_finite() && c >= 0.0) {
                        problems.push(format!("latency[{i}][{j}] = {c} must be finite and nonnegative"));
                    }
                }
            }
        }
        for (i, s) in servers.iter().enumerate() {
            if !(s.n.is_finite() && s.n >= 0.0) {
                problems.push(format!("server {i} ({}) has invalid own load {}", s.id, s.n));
            }
        }
        let l_tot: f64 = servers.iter().map(|s| s.n).sum();
        let capacity: f64 = servers.iter().map(|s| s.load_function.l_max()).sum();
        if problems.is_empty() && capacity < l_tot {
            problems.push(format!("total load {l_tot} exceeds the summed l_max {capacity}"));
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok(Instance { servers, latency, l_tot })
    }

    pub fn m(&self) -> usize {
        self.servers.len()
    }

    pub fn servers(&self) -> &[Server] {
        &self.servers
    }

    pub fn server(&self, i: usize) -> &Server {
        &self.servers[i]
    }

    pub fn lf(&self, i: usize) -> &LoadFunction {
        &self.servers[i].load_function
    }

    pub fn own_load(&self, i: usize) -> f64 {
        self.servers[i].n
    }

    pub fn own_loads(&self) -> Vec<f64> {
        self.servers.iter().map(|s| s.n).collect()
    }

    pub fn latency(&self) -> &Matrix {
        &self.latency
    }

    pub fn c(&self, i: usize, j: usize) -> f64 {
        self.latency[(i, j)]
    }

    pub fn l_tot(&self) -> f64 {
        self.l_tot
    }

    /// Largest per-server limit.
    pub fn l_max(&self) -> f64 {
        self.servers.iter().map(|s| s.load_function.l_max()).fold(0.0, f64::max)
    }

    /// `U1` and `U2` maximised over all servers.
    pub fn bounds(&self) -> DerivativeBounds {
        self.servers.iter().map(|s| s.load_function.derivative_bounds()).fold(
            DerivativeBounds { u1: 0.0, u2: 0.0 },
            |acc, b| DerivativeBounds { u1: acc.u1.max(b.u1), u2: acc.u2.max(b.u2) },
        )
    }

    /// Highest load the algorithms place on server `i`.
    pub fn cap(&self, i: usize) -> f64 {
        let l_max = self.lf(i).l_max();
        l_max - CAP_MARGIN * l_max
    }

    /// Absolute slack used by feasibility and conservation checks.
    pub fn slack(&self) -> f64 {
        1e-12 * self.l_tot.max(1.0)
    }

    /// Marginal cost of taking load away from `i` at load `l` (left derivative of `h`);
    /// `-inf` on an empty server.
    pub fn marginal_out(&self, i: usize, l: f64) -> f64 {
        if l <= 0.0 {
            f64::NEG_INFINITY
        } else {
            self.lf(i).g_below(l.min(self.lf(i).l_max()))
        }
    }

    /// Marginal cost of adding load to `i` at load `l` (right derivative of `h`);
    /// `+inf` once the server is at its cap, up to the rounding of `l + (cap − l)`.
    pub fn marginal_in(&self, i: usize, l: f64) -> f64 {
        let cap = self.cap(i);
        if l >= cap - 4.0 * f64::EPSILON * cap {
            f64::INFINITY
        } else {
            self.lf(i).g_above(l.max(0.0))
        }
    }

    /// Total processing time on `i`, failing when the load is outside `[0, l_max]`.
    pub fn processing_time(&self, i: usize, l: f64) -> Result<f64> {
        let lf = self.lf(i);
        let slack = self.slack();
        if l < -slack || l > lf.l_max() + slack || l.is_nan() {
            return Err(Error::Infeasible { server: i, load: l, l_max: lf.l_max() });
        }
        Ok(lf.h(l.clamp(0.0, lf.l_max())))
    }
}

/// Anything that determines per-server loads and a set of paid transfers.
pub trait Routing {
    fn loads(&self) -> Vec<f64>;
    /// Positive off-diagonal transfers `(from, to, amount)`, each paying `c[from][to]`.
    fn transfers(&self) -> Vec<(usize, usize, f64)>;
    fn representation(&self) -> &'static str;
    fn matrix(&self) -> &Matrix;

    fn communication_cost(&self, inst: &Instance) -> f64 {
        self.transfers().iter().map(|&(i, j, r)| inst.c(i, j) * r).sum()
    }
}

/// Per-edge transfers and the resulting loads.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFlowState {
    pub r: Matrix,
    pub loads: Vec<f64>,
}

impl EdgeFlowState {
    /// Everything processed locally.
    pub fn identity(inst: &Instance) -> Self {
        EdgeFlowState { r: Matrix::zeros(inst.m()), loads: inst.own_loads() }
    }

    /// Builds a state from edge transfers, deriving loads by conservation.
    /// The diagonal of `r` is ignored.
    pub fn from_transfers(inst: &Instance, mut r: Matrix) -> Result<Self> {
        let m = inst.m();
        if r.dim() != m {
            return Err(Error::Dimension(format!("transfer matrix is {0}x{0}, expected {m}", r.dim())));
        }
        for i in 0..m {
            r[(i, i)] = 0.0;
            for j in 0..m {
                if r[(i, j)] < 0.0 || !r[(i, j)].is_finite() {
                    return Err(Error::InvalidParameter(format!("transfer r[{i}][{j}] = {}", r[(i, j)])));
                }
            }
        }
        let loads = (0..m)
            .map(|i| inst.own_load(i) + r.column(i).sum::<f64>() - r.row(i).iter().sum::<f64>())
            .collect();
        Ok(EdgeFlowState { r, loads })
    }
}

impl Routing for EdgeFlowState {
    fn loads(&self) -> Vec<f64> {
        self.loads.clone()
    }

    fn transfers(&self) -> Vec<(usize, usize, f64)> {
        positive_off_diagonal(&self.r)
    }

    fn representation(&self) -> &'static str {
        "edge_flow"
    }

    fn matrix(&self) -> &Matrix {
        &self.r
    }
}

/// `r[k][i]`: requests owned by `k` and executed on `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginAssignment {
    pub r: Matrix,
}

impl OriginAssignment {
    pub fn identity(inst: &Instance) -> Self {
        let mut r = Matrix::zeros(inst.m());
        for k in 0..inst.m() {
            r[(k, k)] = inst.own_load(k);
        }
        OriginAssignment { r }
    }

    /// Checks that every origin's requests are fully placed and builds the assignment.
    pub fn new(inst: &Instance, r: Matrix) -> Result<Self> {
        let m = inst.m();
        if r.dim() != m {
            return Err(Error::Dimension(format!("assignment matrix is {0}x{0}, expected {m}", r.dim())));
        }
        for k in 0..m {
            if r.row(k).iter().any(|x| *x < 0.0 || !x.is_finite()) {
                return Err(Error::InvalidParameter(format!("origin {k} has a negative or non-finite entry")));
            }
            let placed: f64 = r.row(k).iter().sum();
            if (placed - inst.own_load(k)).abs() > 1e-9 * inst.l_tot().max(1.0) {
                return Err(Error::InvalidParameter(format!(
                    "origin {k} places {placed} requests but owns {}",
                    inst.own_load(k)
                )));
            }
        }
        Ok(OriginAssignment { r })
    }

    pub fn load(&self, i: usize) -> f64 {
        self.r.column(i).sum()
    }
}

impl Routing for OriginAssignment {
    fn loads(&self) -> Vec<f64> {
        (0..self.r.dim()).map(|i| self.load(i)).collect()
    }

    fn transfers(&self) -> Vec<(usize, usize, f64)> {
        positive_off_diagonal(&self.r)
    }

    fn representation(&self) -> &'static str {
        "origin"
    }

    fn matrix(&self) -> &Matrix {
        &self.r
    }
}

fn positive_off_diagonal(r: &Matrix) -> Vec<(usize, usize, f64)> {
    let m = r.dim();
    let mut out = Vec::new();
    for i in 0..m {
        for j in 0..m {
            if i != j && r[(i, j)] > 0.0 {
                out.push((i, j, r[(i, j)]));
            }
        }
    }
    out
}

/// Row-stochastic relay fractions `rho[i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayFractions {
    rho: Matrix,
}

impl RelayFractions {
    pub fn new(rho: Matrix) -> Result<Self> {
        for i in 0..rho.dim() {
            let row = rho.row(i);
            if row.iter().any(|x| *x < 0.0 || !x.is_finite()) {
                return Err(Error::InvalidParameter(format!("relay fractions of server {i} must be nonnegative")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!("relay fractions of server {i} sum to {sum}")));
            }
        }
        Ok(RelayFractions { rho })
    }

    pub fn identity(m: usize) -> Self {
        let mut rho = Matrix::zeros(m);
        for i in 0..m {
            rho[(i, i)] = 1.0;
        }
        RelayFractions { rho }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.rho
    }
}

/// Loads when every request is relayed at most once: `l_i = Σ_j rho[j][i]·n_j`.
pub fn load_vector_single_hop(inst: &Instance, rho: &RelayFractions) -> Vec<f64> {
    let m = inst.m();
    (0..m)
        .map(|i| (0..m).map(|j| rho.rho[(j, i)] * inst.own_load(j)).sum())
        .collect()
}

/// Loads when forwarded requests are relayed again by the same fractions.
///
/// Solves the throughput fixed point `t_i = n_i + Σ_{k≠i} rho[k][i]·t_k`; the
/// server then keeps `l_i = rho[i][i]·t_i`.
pub fn load_vector_multi_hop(inst: &Instance, rho: &RelayFractions) -> Result<Vec<f64>> {
    let m = inst.m();
    let throughput = solve_throughput(&rho.rho, &inst.own_loads())?;
    let scale = inst.l_tot().max(1.0);
    if throughput.iter().any(|t| *t < -1e-9 * scale || !t.is_finite()) {
        return Err(Error::SingularRouting);
    }
    Ok((0..m).map(|i| rho.rho[(i, i)] * throughput[i].max(0.0)).collect())
}

/// Gaussian elimination with partial pivoting on `(I - offdiag(rho)^T) t = n`.
fn solve_throughput(rho: &Matrix, n: &[f64]) -> Result<Vec<f64>> {
    let m = rho.dim();
    let mut a = vec![vec![0.0; m + 1]; m];
    for i in 0..m {
        for k in 0..m {
            a[i][k] = if i == k { 1.0 } else { -rho[(k, i)] };
        }
        a[i][m] = n[i];
    }
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap_or(col);
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::SingularRouting);
        }
        a.swap(col, pivot);
        for row in 0..m {
            if row != col {
                let factor = a[row][col] / a[col][col];
                if factor != 0.0 {
                    for k in col..=m {
                        a[row][k] -= factor * a[col][k];
                    }
                }
            }
        }
    }
    Ok((0..m).map(|i| a[i][m] / a[i][i]).collect())
}

/// Total processing time: `Σ h_i(l_i) + Σ c·r` over paid transfers.
pub fn objective<R: Routing + ?Sized>(inst: &Instance, state: &R) -> Result<f64> {
    let loads = state.loads();
    let mut total = 0.0;
    for (i, l) in loads.iter().enumerate() {
        total += inst.processing_time(i, *l)?;
    }
    Ok(total + state.communication_cost(inst))
}

pub(crate) fn check_feasible(inst: &Instance, loads: &[f64]) -> Result<()> {
    if loads.len() != inst.m() {
        return Err(Error::Dimension(format!("{} loads for {} servers", loads.len(), inst.m())));
    }
    for (i, l) in loads.iter().enumerate() {
        inst.processing_time(i, *l)?;
    }
    Ok(())
}

/// Violation of marginal balance for each ordered pair and the derived error bound.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityReport {
    pub delta: Matrix,
    pub max_delta: f64,
    /// Pair attaining `max_delta`, lowest `(i, j)` first; `None` when no pair is violated.
    pub argmax: Option<(usize, usize)>,
    /// Transfers `(from, to)` whose receiver is more expensive at the margin than the sender.
    pub violated_kkt_edges: Vec<(usize, usize)>,
    pub feasible: bool,
    /// `l_tot · m · max_delta`: bound on the distance to the optimal objective.
    pub bound_e: f64,
    pub tolerance: f64,
    /// Largest gain of shipping load along a residual path of the transfers;
    /// see [`path_gap`]. Zero when only loads were checked.
    pub path_gap: f64,
}

impl OptimalityReport {
    pub fn passed(&self) -> bool {
        self.feasible
            && self.max_delta <= self.tolerance
            && self.path_gap <= self.tolerance
            && self.violated_kkt_edges.is_empty()
    }
}

/// `Δ_ij = max(0, g_i(l_i) − g_j(l_j) − c_ij)`.
///
/// Marginals are one-sided: an empty server cannot send and a server at its
/// cap cannot receive, so neither contributes a violation.
pub fn delta_matrix(inst: &Instance, loads: &[f64]) -> Result<OptimalityReport> {
    check_feasible(inst, loads)?;
    let m = inst.m();
    let out: Vec<f64> = (0..m).map(|i| inst.marginal_out(i, loads[i])).collect();
    let inn: Vec<f64> = (0..m).map(|j| inst.marginal_in(j, loads[j])).collect();
    let mut delta = Matrix::zeros(m);
    let mut max_delta = 0.0;
    let mut argmax = None;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let d = out[i] - inn[j] - inst.c(i, j);
            if d > 0.0 {
                delta[(i, j)] = d;
                if d > max_delta {
                    max_delta = d;
                    argmax = Some((i, j));
                }
            }
        }
    }
    Ok(OptimalityReport {
        delta,
        max_delta,
        argmax,
        violated_kkt_edges: Vec::new(),
        feasible: true,
        bound_e: inst.l_tot() * m as f64 * max_delta,
        tolerance: 0.0,
        path_gap: 0.0,
    })
}

/// True when shipping along `from → to` is not worse at the margin than sending it back.
pub(crate) fn edge_is_balanced(inst: &Instance, loads: &[f64], from: usize, to: usize, tol: f64) -> bool {
    inst.marginal_out(to, loads[to]) + inst.c(from, to) <= inst.marginal_in(from, loads[from]) + tol
}

/// Checks marginal balance on all pairs (`Δ_ij ≤ tol`) and on every transfer in use.
pub fn check_kkt<R: Routing + ?Sized>(inst: &Instance, state: &R, tol: f64) -> Result<OptimalityReport> {
    let loads = state.loads();
    let mut report = delta_matrix(inst, &loads)?;
    report.tolerance = tol;
    report.violated_kkt_edges = state
        .transfers()
        .into_iter()
        .filter(|&(i, j, _)| !edge_is_balanced(inst, &loads, i, j, tol))
        .map(|(i, j, _)| (i, j))
        .collect();
    let mut r = Matrix::zeros(inst.m());
    for (i, j, amount) in state.transfers() {
        r[(i, j)] += amount;
    }
    report.path_gap = path_gap(inst, &loads, &r)?.value;
    Ok(report)
}

/// The best residual path for moving load from one server to another.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGap {
    /// `max(0, g_from − g_to − d)`, with `d` the path's latency.
    pub value: f64,
    /// Servers visited, from sender to receiver; empty when `value` is zero.
    pub path: Vec<usize>,
    /// Latency of the path; arcs running against a transfer count negative.
    pub latency: f64,
}

/// [`path_gap`] of the loads themselves, measured on a min-cost flow that
/// realizes them. This is the certificate the error bound rests on.
pub fn load_gap(inst: &Instance, loads: &[f64]) -> Result<PathGap> {
    let flow = crate::flow::optimize_network_flow(inst, loads)?;
    path_gap(inst, loads, &flow.flow)
}

/// Residual arc `a → b`: shrink a transfer `b → a` when that refunds more
/// than shipping `a → b` costs.
pub(crate) fn residual_backward(inst: &Instance, r: &Matrix, a: usize, b: usize) -> bool {
    r[(b, a)] > 0.0 && -inst.c(b, a) < inst.c(a, b)
}

fn arc_cost(inst: &Instance, r: &Matrix, a: usize, b: usize) -> f64 {
    if residual_backward(inst, r, a, b) {
        -inst.c(b, a)
    } else {
        inst.c(a, b)
    }
}

/// Largest marginal gain of moving load along a path of the residual graph.
///
/// Every pair `a → b` is an arc of cost `c_ab`, and a positive transfer
/// `b → a` adds an arc of cost `−c_ba` that shrinks it. Loads are optimal
/// exactly when no such path pays off and `r` has no negative residual
/// cycle. The direct arcs alone give `max Δ`, which can miss an imbalance
/// when a server sits on a kink or at its cap: its two marginals then differ
/// and the servers it trades with need not agree. A negative residual cycle
/// yields an infinite gap.
pub fn path_gap(inst: &Instance, loads: &[f64], r: &Matrix) -> Result<PathGap> {
    check_feasible(inst, loads)?;
    let m = inst.m();
    let mut dist = Matrix::zeros(m);
    let mut next = vec![vec![usize::MAX; m]; m];
    for a in 0..m {
        next[a][a] = a;
        for b in 0..m {
            if a != b {
                dist[(a, b)] = arc_cost(inst, r, a, b);
                next[a][b] = b;
            }
        }
    }
    // Opposite arcs of a transfer form zero-cost cycles; relaxing only on a
    // clear gain keeps rounding noise from threading the paths through them.
    let margin = 1e-12 * inst.latency().max().max(f64::MIN_POSITIVE);
    for k in 0..m {
        for a in 0..m {
            for b in 0..m {
                let via = dist[(a, k)] + dist[(k, b)];
                if via < dist[(a, b)] - margin {
                    dist[(a, b)] = via;
                    next[a][b] = next[a][k];
                }
            }
        }
    }
    let none = PathGap { value: 0.0, path: Vec::new(), latency: 0.0 };
    if (0..m).any(|a| dist[(a, a)] < -crate::flow::cycle_tolerance(inst)) {
        return Ok(PathGap { value: f64::INFINITY, ..none });
    }
    let out: Vec<f64> = (0..m).map(|i| inst.marginal_out(i, loads[i])).collect();
    let inn: Vec<f64> = (0..m).map(|j| inst.marginal_in(j, loads[j])).collect();
    let mut best = (0.0, None);
    for a in 0..m {
        for b in 0..m {
            if a != b {
                let g = out[a] - inn[b] - dist[(a, b)];
                if g > best.0 {
                    best = (g, Some((a, b)));
                }
            }
        }
    }
    let Some((a, b)) = best.1 else { return Ok(none) };
    let mut path = vec![a];
    let mut u = a;
    while u != b {
        u = next[u][b];
        if path.contains(&u) {
            // unreachable with the margin above; fall back to the direct arc
            path = vec![a, b];
            break;
        }
        path.push(u);
    }
    let latency: f64 = path.windows(2).map(|w| arc_cost(inst, r, w[0], w[1])).sum();
    Ok(PathGap { value: (out[a] - inn[b] - latency).max(0.0), path, latency })
}

/// Ordered pairs `(i, j)` breaking `f_i(0) < c_ij + f_j(0)`.
pub fn check_efficient_epsilon(inst: &Instance) -> Vec<(usize, usize)> {
    let m = inst.m();
    let f0: Vec<f64> = (0..m).map(|i| inst.lf(i).f(0.0)).collect();
    let mut out = Vec::new();
    for i in 0..m {
        for j in 0..m {
            if i != j && f0[i] >= inst.c(i, j) + f0[j] {
                out.push((i, j));
            }
        }
    }
    out
}

/// Triples `(i, k, j)` of distinct servers with `c_ij ≥ c_ik + c_kj`.
pub fn check_triangle(inst: &Instance) -> Vec<(usize, usize, usize)> {
    let m = inst.m();
    let mut out = Vec::new();
    for i in 0..m {
        for k in 0..m {
            for j in 0..m {
                if i != k && k != j && i != j && inst.c(i, j) >= inst.c(i, k) + inst.c(k, j) {
                    out.push((i, k, j));
                }
            }
        }
    }
    out
}

/// Direct edges `k → i` carrying `r[k][i]`.
pub fn to_edge_flow(inst: &Instance, oa: &OriginAssignment) -> EdgeFlowState {
    let m = inst.m();
    let mut r = oa.r.clone();
    for k in 0..m {
        r[(k, k)] = 0.0;
    }
    EdgeFlowState { r, loads: oa.loads() }
}

/// Decomposes an acyclic edge flow into per-origin assignments.
///
/// Servers are visited in topological order; each mixes the requests it
/// receives with its own and splits the mix proportionally between what it
/// keeps and each outgoing edge.
pub fn to_origin(inst: &Instance, ef: &EdgeFlowState) -> Result<OriginAssignment> {
    let m = inst.m();
    let order = topological_order(&ef.r).ok_or(Error::CyclicFlow)?;
    // pool[i][k]: requests of origin k passing through i
    let mut pool = vec![vec![0.0; m]; m];
    for (i, row) in pool.iter_mut().enumerate() {
        row[i] = inst.own_load(i);
    }
    let mut out = Matrix::zeros(m);
    for &i in &order {
        let through: f64 = pool[i].iter().sum();
        if through <= 0.0 {
            continue;
        }
        let kept = ef.loads[i].max(0.0);
        for k in 0..m {
            let share = pool[i][k] / through;
            if share == 0.0 {
                continue;
            }
            out[(k, i)] += share * kept;
            for j in 0..m {
                if j != i && ef.r[(i, j)] > 0.0 {
                    pool[j][k] += share * ef.r[(i, j)];
                }
            }
        }
    }
    Ok(OriginAssignment { r: out })
}

/// Kahn's algorithm over positive off-diagonal entries; `None` on a cycle.
pub(crate) fn topological_order(r: &Matrix) -> Option<Vec<usize>> {
    let m = r.dim();
    let mut indegree = vec![0usize; m];
    for i in 0..m {
        for j in 0..m {
            if i != j && r[(i, j)] > 0.0 {
                indegree[j] += 1;
            }
        }
    }
    let mut ready: Vec<usize> = (0..m).rev().filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(m);
    while let Some(i) = ready.pop() {
        order.push(i);
        for j in (0..m).rev() {
            if i != j && r[(i, j)] > 0.0 {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.push(j);
                }
            }
        }
    }
    (order.len() == m).then_some(order)
}
