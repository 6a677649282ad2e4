//! JSON formats for instances and routings.
//!
//! An instance file lists servers and a row-major latency matrix:
//!
//! ```json
//! {"servers": [{"id": "a", "n": 10, "load_function": {"kind": "batch", "s": 1, "l_max": 20}},
//!              {"id": "b", "n": 0,  "load_function": {"kind": "batch", "s": 1, "l_max": 20}}],
//!  "latency": [[0, 2], [2, 0]]}
//! ```
//!
//! A load function gives exactly one of `l_max` and `t_max`. Measured curves
//! may give neither, which means their last sample. Floats are written in the
//! shortest form that reads back to the same value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loadfn::{Kind, LoadFunction, PiecewiseLinear};
use crate::matrix::Matrix;
use crate::model::{objective, EdgeFlowState, Instance, OriginAssignment, Routing, Server};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KindSpec {
    Queuing { mu: f64 },
    Batch { s: f64 },
    Affine { a: f64, b: f64 },
    Empirical { points: Vec<[f64; 2]> },
}

/// A load function as written in instance files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadFunctionSpec {
    #[serde(flatten)]
    pub kind: KindSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
}

impl LoadFunctionSpec {
    pub fn from_load_function(lf: &LoadFunction) -> Self {
        let kind = match lf.kind() {
            Kind::Queuing { mu } => KindSpec::Queuing { mu: *mu },
            Kind::Batch { s } => KindSpec::Batch { s: *s },
            Kind::Affine { a, b } => KindSpec::Affine { a: *a, b: *b },
            Kind::Empirical(pw) => KindSpec::Empirical { points: pw.points().iter().map(|&(l, t)| [l, t]).collect() },
        };
        LoadFunctionSpec { kind, l_max: Some(lf.l_max()), t_max: None }
    }

    pub fn build(&self) -> Result<LoadFunction> {
        let kind = match &self.kind {
            KindSpec::Queuing { mu } => Kind::Queuing { mu: *mu },
            KindSpec::Batch { s } => Kind::Batch { s: *s },
            KindSpec::Affine { a, b } => Kind::Affine { a: *a, b: *b },
            KindSpec::Empirical { points } => {
                Kind::Empirical(PiecewiseLinear::new(points.iter().map(|p| (p[0], p[1])).collect())?)
            }
        };
        match (self.l_max, self.t_max, &kind) {
            (Some(l_max), None, _) => LoadFunction::new(kind, l_max),
            (None, Some(t_max), _) => LoadFunction::with_budget(kind, t_max),
            (None, None, Kind::Empirical(pw)) => {
                let last = pw.last_load();
                LoadFunction::new(kind, last)
            }
            (None, None, _) => Err(Error::InvalidParameter("needs exactly one of l_max and t_max".into())),
            (Some(_), Some(_), _) => Err(Error::InvalidParameter("gives both l_max and t_max; exactly one is allowed".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSpec {
    pub id: String,
    pub n: f64,
    pub load_function: LoadFunctionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub servers: Vec<ServerSpec>,
    pub latency: Vec<Vec<f64>>,
}

impl InstanceFile {
    pub fn from_instance(inst: &Instance) -> Self {
        let servers = inst
            .servers()
            .iter()
            .map(|s| ServerSpec { id: s.id.clone(), n: s.n, load_function: LoadFunctionSpec::from_load_function(&s.load_function) })
            .collect();
        InstanceFile { servers, latency: inst.latency().rows() }
    }

    /// Builds the instance, listing every problem found rather than the first.
    pub fn build(&self) -> Result<Instance> {
        let mut problems = Vec::new();
        let mut servers = Vec::with_capacity(self.servers.len());
        for (i, s) in self.servers.iter().enumerate() {
            let lf = s.load_function.build().unwrap_or_else(|e| {
                problems.push(format!("server {i} ({}): {}", s.id, message(&e)));
                // stand-in so the remaining checks still run
                LoadFunction::affine(0.0, 0.0, f64::MAX / 4.0).expect("valid stand-in")
            });
            servers.push(Server::new(s.id.clone(), s.n, lf));
        }
        let m = self.latency.len();
        let ragged: Vec<String> = self
            .latency
            .iter()
            .enumerate()
            .filter(|(_, row)| row.len() != m)
            .map(|(i, row)| format!("latency row {i} has {} entries, expected {m}: latency must be square", row.len()))
            .collect();
        let latency = if ragged.is_empty() {
            Matrix::from_rows(self.latency.clone())?
        } else {
            problems.extend(ragged);
            Matrix::zeros(servers.len())
        };
        match Instance::new(servers, latency) {
            Ok(inst) if problems.is_empty() => Ok(inst),
            Ok(_) => Err(Error::Validation(problems)),
            Err(Error::Validation(more)) => {
                // capacity is meaningless while a stand-in is in place
                let stand_in = !problems.is_empty();
                problems.extend(more.into_iter().filter(|p| !(stand_in && p.starts_with("total load"))));
                Err(Error::Validation(problems))
            }
            Err(e) => Err(e),
        }
    }
}

fn message(e: &Error) -> String {
    match e {
        Error::InvalidParameter(s) => s.clone(),
        other => other.to_string(),
    }
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse(format!("line {}, column {}: {}", e.line(), e.column(), e))
}

/// Reads and validates an instance file.
pub fn parse_instance(text: &str) -> Result<Instance> {
    let file: InstanceFile = serde_json::from_str(text).map_err(parse_error)?;
    file.build()
}

pub fn instance_to_json(inst: &Instance) -> String {
    serde_json::to_string_pretty(&InstanceFile::from_instance(inst)).expect("instances serialize")
}

/// Routing output: the matrix, the loads it yields and its objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingFile {
    pub r: Matrix,
    pub loads: Vec<f64>,
    pub objective: f64,
    /// `edge_flow` for transfers `r[i][j]`, `origin` for placements `r[k][i]`.
    pub representation: String,
}

impl RoutingFile {
    pub fn from_state<R: Routing + ?Sized>(inst: &Instance, state: &R) -> Result<Self> {
        Ok(RoutingFile {
            r: state.matrix().clone(),
            loads: state.loads(),
            objective: objective(inst, state)?,
            representation: state.representation().to_string(),
        })
    }

    /// Rebuilds the state against `inst`; loads are derived, not trusted.
    pub fn to_state(&self, inst: &Instance) -> Result<AnyRouting> {
        match self.representation.as_str() {
            "edge_flow" => Ok(AnyRouting::EdgeFlow(EdgeFlowState::from_transfers(inst, self.r.clone())?)),
            "origin" => Ok(AnyRouting::Origin(OriginAssignment::new(inst, self.r.clone())?)),
            other => Err(Error::Parse(format!("unknown representation {other:?}, expected \"edge_flow\" or \"origin\""))),
        }
    }
}

pub fn routing_to_json<R: Routing + ?Sized>(inst: &Instance, state: &R) -> Result<String> {
    Ok(serde_json::to_string_pretty(&RoutingFile::from_state(inst, state)?).expect("routings serialize"))
}

pub fn parse_routing(text: &str) -> Result<RoutingFile> {
    serde_json::from_str(text).map_err(parse_error)
}

/// Either routing representation, as read from a file.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyRouting {
    EdgeFlow(EdgeFlowState),
    Origin(OriginAssignment),
}

impl AnyRouting {
    fn inner(&self) -> &dyn Routing {
        match self {
            AnyRouting::EdgeFlow(s) => s,
            AnyRouting::Origin(s) => s,
        }
    }
}

impl Routing for AnyRouting {
    fn loads(&self) -> Vec<f64> {
        self.inner().loads()
    }

    fn transfers(&self) -> Vec<(usize, usize, f64)> {
        self.inner().transfers()
    }

    fn representation(&self) -> &'static str {
        self.inner().representation()
    }

    fn matrix(&self) -> &Matrix {
        self.inner().matrix()
    }
}
