mod common;

use geobalance::flow::{cancel_cycle, cycle_tolerance, find_negative_cycle, min_cost_flow, FlowProblem};
use geobalance::model::{Instance, OriginAssignment, Routing};
use geobalance::synth::random_assignment;
use geobalance::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn demands(seed: u64, m: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
    let mean = raw.iter().sum::<f64>() / m as f64;
    raw.iter().map(|x| x - mean).collect()
}

/// Bellman–Ford on the residual graph: forward arcs at `c`, reverse arcs at `-c`
/// wherever flow is positive.
fn residual_has_negative_cycle(flow: &Matrix, cost: &Matrix, tau: f64) -> bool {
    let m = flow.dim();
    let mut arcs = Vec::new();
    for a in 0..m {
        for b in 0..m {
            if a != b {
                arcs.push((a, b, cost[(a, b)]));
                if flow[(a, b)] > 0.0 {
                    arcs.push((b, a, -cost[(a, b)]));
                }
            }
        }
    }
    let mut dist = vec![0.0; m];
    for _ in 0..m {
        let mut changed = false;
        for &(a, b, w) in &arcs {
            if dist[a] + w < dist[b] - tau {
                dist[b] = dist[a] + w;
                changed = true;
            }
        }
        if !changed {
            return false;
        }
    }
    true
}

fn communication(inst: &Instance, oa: &OriginAssignment) -> f64 {
    let m = inst.m();
    (0..m).flat_map(|k| (0..m).map(move |i| (k, i))).map(|(k, i)| oa.r[(k, i)] * inst.c(k, i)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flow_matches_enumeration_on_a_forest(seed in any::<u64>(), m in 2usize..5) {
        let inst = common::instance(seed, m);
        let b = demands(seed, m);
        let sol = min_cost_flow(&FlowProblem::new(b.clone(), inst.latency().clone()).unwrap());
        let best = common::enumerate_min_cost_flow(&b, inst.latency()).unwrap();
        prop_assert!((sol.total_cost - best).abs() <= 1e-6 * best.abs().max(1.0), "{} vs {best}", sol.total_cost);

        let volume: f64 = b.iter().map(|x| x.abs()).sum();
        for i in 0..m {
            let net: f64 = (0..m).map(|k| sol.flow[(k, i)] - sol.flow[(i, k)]).sum();
            prop_assert!((net - b[i]).abs() <= 1e-9 * volume.max(1.0));
            for k in 0..m {
                prop_assert!(sol.flow[(k, i)] >= 0.0);
            }
        }
        // a forest on m nodes has at most m - 1 edges and never closes a cycle
        let support = sol.support();
        prop_assert!(support.len() < m);
        let mut parent: Vec<usize> = (0..m).collect();
        fn root(p: &[usize], mut x: usize) -> usize {
            while p[x] != x {
                x = p[x];
            }
            x
        }
        for (u, v) in support {
            let (a, b) = (root(&parent, u), root(&parent, v));
            prop_assert_ne!(a, b);
            parent[a] = b;
        }
    }

    #[test]
    fn solved_flows_leave_no_negative_cycle(seed in any::<u64>(), m in 2usize..7) {
        let inst = common::instance(seed, m);
        let sol = min_cost_flow(&FlowProblem::new(demands(seed, m), inst.latency().clone()).unwrap());
        prop_assert!(!residual_has_negative_cycle(&sol.flow, inst.latency(), cycle_tolerance(&inst)));
    }

    #[test]
    fn cancelling_keeps_loads_and_origins(seed in any::<u64>(), m in 2usize..7) {
        let inst = common::instance(seed, m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = random_assignment(&mut rng, &inst);
        let tau = cycle_tolerance(&inst);
        let mut count = 0;
        while let Some(cycle) = find_negative_cycle(&inst, &state) {
            let bottleneck = cycle.steps.iter().map(|&(i, k)| state.r[(k, i)]).fold(f64::INFINITY, f64::min);
            let next = cancel_cycle(&inst, &state, &cycle).unwrap();
            // rotating t out of one cell and into another is exact up to rounding of the sums
            let eps = 1e-12 * inst.l_tot();
            for (a, b) in next.loads().iter().zip(state.loads()) {
                prop_assert!((a - b).abs() <= eps);
            }
            for k in 0..m {
                let (a, b) = (next.r.row(k).iter().sum::<f64>(), state.r.row(k).iter().sum::<f64>());
                prop_assert!((a - b).abs() <= eps);
            }
            let drop = communication(&inst, &state) - communication(&inst, &next);
            prop_assert!(drop >= tau * bottleneck * (1.0 - 1e-9), "drop {drop} < {}", tau * bottleneck);
            state = next;
            count += 1;
            prop_assert!(count <= 10_000, "cancellation does not terminate");
        }
    }
}
