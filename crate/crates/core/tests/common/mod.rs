//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use geobalance::Matrix;

/// Cheapest uncapacitated flow by trying every undirected forest.
///
/// Every basic solution of an uncapacitated transshipment problem is
/// supported on a forest, and on a forest the flow is forced by the demands:
/// peeling a leaf `v` attached to `u` puts exactly `b_v` on the edge. Returns
/// `None` if no forest balances the demands.
pub fn enumerate_min_cost_flow(b: &[f64], cost: &Matrix) -> Option<f64> {
    let m = b.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|u| (u + 1..m).map(move |v| (u, v))).collect();
    let volume: f64 = b.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << pairs.len()) {
        let edges: Vec<(usize, usize)> = (0..pairs.len()).filter(|e| mask & (1 << e) != 0).map(|e| pairs[e]).collect();
        if edges.len() >= m.max(1) || !is_forest(m, &edges) {
            continue;
        }
        if let Some(c) = forest_cost(b, cost, &edges, volume) {
            if best.is_none_or(|x| c < x) {
                best = Some(c);
            }
        }
    }
    best
}

fn is_forest(m: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] == x {
            x
        } else {
            let r = find(p, p[x]);
            p[x] = r;
            r
        }
    }
    for &(u, v) in edges {
        let (a, b) = (find(&mut parent, u), find(&mut parent, v));
        if a == b {
            return false;
        }
        parent[a] = b;
    }
    true
}

fn forest_cost(b: &[f64], cost: &Matrix, edges: &[(usize, usize)], volume: f64) -> Option<f64> {
    let m = b.len();
    let mut demand = b.to_vec();
    let mut alive: Vec<(usize, usize)> = edges.to_vec();
    let mut total = 0.0;
    while !alive.is_empty() {
        let mut degree = vec![0; m];
        for &(u, v) in &alive {
            degree[u] += 1;
            degree[v] += 1;
        }
        let idx = alive.iter().position(|&(u, v)| degree[u] == 1 || degree[v] == 1)?;
        let (u, v) = alive.swap_remove(idx);
        let (hub, leaf) = if degree[v] == 1 { (u, v) } else { (v, u) };
        let f = demand[leaf];
        total += if f >= 0.0 { f * cost[(hub, leaf)] } else { -f * cost[(leaf, hub)] };
        demand[hub] += f;
        demand[leaf] = 0.0;
    }
    demand.iter().all(|d| d.abs() <= 1e-9 * volume).then_some(total)
}

/// Per-server load error relative to the optimal load, with a floor of
/// `1e-2·l_tot/m` so that servers the optimum leaves (almost) empty are not
/// judged by a vanishing denominator.
pub fn load_error(loads: &[f64], optimal: &[f64], l_tot: f64) -> f64 {
    let m = loads.len() as f64;
    let floor = 1e-2 * l_tot / m;
    loads
        .iter()
        .zip(optimal)
        .map(|(l, o)| (l - o).abs() / o.max(floor))
        .fold(0.0, f64::max)
}

/// A random metric instance drawn from `seed`.
pub fn instance(seed: u64, m: usize) -> geobalance::model::Instance {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    geobalance::synth::random_instance(&mut rng, &geobalance::synth::SynthConfig::new(m)).expect("valid instance")
}
