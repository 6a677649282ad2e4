//! Random instances for tests and experiments.
//!
//! Servers sit at random points in the unit square and latencies are scaled
//! Euclidean distances, so they satisfy the triangle inequality. Every server
//! gets the same response-time budget, which fixes its `l_max`.

use rand::Rng;

use crate::error::Result;
use crate::loadfn::{Kind, LoadFunction, PiecewiseLinear};
use crate::matrix::Matrix;
use crate::model::{Instance, OriginAssignment, Server};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub m: usize,
    /// Shared response-time budget `t_max`.
    pub t_max: f64,
    /// Total load as a fraction of total capacity, drawn from this range.
    pub utilization: (f64, f64),
    /// Multiplier on Euclidean distance, drawn from this range.
    pub latency_scale: (f64, f64),
}

impl SynthConfig {
    pub fn new(m: usize) -> Self {
        SynthConfig { m, t_max: 3.0, utilization: (0.3, 0.8), latency_scale: (0.05, 1.0) }
    }
}

/// A queuing, batch or measured load function, chosen uniformly.
pub fn random_load_function(rng: &mut impl Rng, t_max: f64) -> Result<LoadFunction> {
    let kind = match rng.random_range(0..3) {
        0 => Kind::Queuing { mu: rng.random_range(1.0..5.0) },
        1 => Kind::Batch { s: rng.random_range(0.5..3.0) },
        _ => {
            // samples of a convex quadratic, like a measured response curve
            let a = rng.random_range(0.1..1.0);
            let b = rng.random_range(0.05..0.5);
            let d = rng.random_range(0.01..0.2);
            let top = rng.random_range(4.0..10.0);
            let points = (0..6)
                .map(|p| {
                    let l = top * p as f64 / 5.0;
                    (l, a + b * l + d * l * l)
                })
                .collect();
            Kind::Empirical(PiecewiseLinear::new(points)?)
        }
    };
    LoadFunction::with_budget(kind, t_max)
}

pub fn random_instance(rng: &mut impl Rng, cfg: &SynthConfig) -> Result<Instance> {
    let m = cfg.m;
    let functions = (0..m).map(|_| random_load_function(rng, cfg.t_max)).collect::<Result<Vec<_>>>()?;
    let capacity: f64 = functions.iter().map(|f| f.l_max()).sum();
    let l_tot = capacity * rng.random_range(cfg.utilization.0..cfg.utilization.1);
    // skewed shares so that balancing has something to do
    let weights: Vec<f64> = (0..m).map(|_| rng.random::<f64>().powi(3)).collect();
    let total_weight: f64 = weights.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let points: Vec<(f64, f64)> = (0..m).map(|_| (rng.random(), rng.random())).collect();
    let scale = rng.random_range(cfg.latency_scale.0..cfg.latency_scale.1);
    let mut latency = Matrix::zeros(m);
    for i in 0..m {
        for j in 0..m {
            if i != j {
                let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
                latency[(i, j)] = scale * (dx * dx + dy * dy).sqrt();
            }
        }
    }
    let servers = functions
        .into_iter()
        .enumerate()
        .map(|(i, f)| Server::new(format!("s{i}"), l_tot * weights[i] / total_weight, f))
        .collect();
    Instance::new(servers, latency)
}

/// A random feasible assignment, mixed from a capacity-proportional spread.
pub fn random_assignment(rng: &mut impl Rng, inst: &Instance) -> OriginAssignment {
    let m = inst.m();
    let caps: Vec<f64> = (0..m).map(|i| inst.cap(i)).collect();
    let total: f64 = caps.iter().sum();
    let mut noise = Matrix::zeros(m);
    for k in 0..m {
        let w: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let s: f64 = w.iter().sum();
        for i in 0..m {
            noise[(k, i)] = inst.own_load(k) * w[i] / s;
        }
    }
    let mut mix = 1.0;
    loop {
        let mut r = Matrix::zeros(m);
        for k in 0..m {
            for i in 0..m {
                r[(k, i)] = (1.0 - mix) * inst.own_load(k) * caps[i] / total + mix * noise[(k, i)];
            }
        }
        let fits = (0..m).all(|i| r.column(i).sum::<f64>() <= caps[i]);
        if fits || mix == 0.0 {
            return OriginAssignment { r };
        }
        mix = if mix < 1e-3 { 0.0 } else { mix * 0.5 };
    }
}
