use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("load {load} outside of [0, {l_max}]")]
    LoadOutOfRange { load: f64, l_max: f64 },
    #[error("samples are not convex and nondecreasing: {0}")]
    NotConvex(String),
    #[error("need at least two samples with distinct loads")]
    TooFewSamples,
    #[error("processing time at zero load ({at_zero}) already exceeds the budget {t_max}")]
    BudgetUnreachable { at_zero: f64, t_max: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("routing has no unique nonnegative throughput (requests circulate without retention)")]
    SingularRouting,
    #[error("server {server} holds {load} above its limit {l_max}")]
    Infeasible { server: usize, load: f64, l_max: f64 },
    #[error("positive transfers form a cycle")]
    CyclicFlow,
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("supplies and demands do not balance (residual {0})")]
    Unbalanced(f64),
    #[error("invalid cycle: {0}")]
    InvalidCycle(String),

    #[error("total load {l_tot} exceeds total capacity {capacity}")]
    Overloaded { l_tot: f64, capacity: f64 },
    #[error("no transfer on edge {from} -> {to}")]
    NoEdge { from: usize, to: usize },

    #[error("pooling servers {i} and {j} admits no feasible split")]
    PoolOverload { i: usize, j: usize },
    #[error("at least two servers are required")]
    TooFewServers,

    #[error("oracle supports at most {cap} servers, got {m}")]
    CapExceeded { m: usize, cap: usize },

    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid instance:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
}
