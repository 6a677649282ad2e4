use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use geobalance::central::{solve_central, CentralConfig, Status};
use geobalance::flow::optimize_network_flow;
use geobalance::gossip::{run_gossip, GossipConfig};
use geobalance::io::{parse_instance, parse_routing, routing_to_json, LoadFunctionSpec};
use geobalance::loadfn::fit_empirical;
use geobalance::model::{check_kkt, load_gap, objective, EdgeFlowState, Instance, Routing};
use geobalance::oracle::solve_oracle;

#[derive(Parser)]
#[command(name = "geobalance", version, about = "Latency-aware load balancing across distributed servers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Balance an instance and write the routing and trace.
    Solve(SolveArgs),
    /// Solve an instance with the reference optimizer (m ≤ 8).
    Oracle(OracleArgs),
    /// Cheapest transfers realizing given loads.
    Flow(FlowArgs),
    /// Check a routing against the optimality conditions.
    Check(CheckArgs),
    /// Fit a piecewise-linear load function to measured samples.
    Fit(FitArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algorithm {
    Central,
    CentralFlow,
    Gossip,
    Oracle,
    Flow,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_enum, default_value = "central")]
    algorithm: Algorithm,
    /// Required error of the objective.
    #[arg(long, default_value_t = 1e-6)]
    target_error: f64,
    /// Read the target error as a fraction of the total load.
    #[arg(long)]
    relative: bool,
    /// Gossip seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Iteration or round budget.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Trace CSV destination.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Routing JSON destination.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Target loads, comma separated, for the flow algorithm.
    #[arg(long, value_delimiter = ',')]
    loads: Option<Vec<f64>>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Routing JSON destination; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FlowArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Target loads, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    loads: Vec<f64>,
    /// Routing JSON destination; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    routing: PathBuf,
    /// Allowed marginal imbalance.
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

#[derive(Args)]
struct FitArgs {
    /// CSV of `load,time` rows; a header row is skipped.
    #[arg(long)]
    samples: PathBuf,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve(args) => solve(args),
        Command::Oracle(args) => {
            let inst = read_instance(&args.instance)?;
            let sol = solve_oracle(&inst)?;
            emit(args.output.as_deref(), &routing_to_json(&inst, &sol.assignment)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Flow(args) => {
            let inst = read_instance(&args.instance)?;
            let state = min_cost_state(&inst, &args.loads)?;
            emit(args.output.as_deref(), &routing_to_json(&inst, &state)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Check(args) => check(args),
        Command::Fit(args) => {
            let text = read(&args.samples)?;
            let samples = parse_samples(&text)?;
            let lf = fit_empirical(&samples)?;
            println!("{}", serde_json::to_string(&LoadFunctionSpec::from_load_function(&lf))?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn solve(args: SolveArgs) -> Result<ExitCode> {
    let inst = read_instance(&args.instance)?;
    let m = inst.m();
    let absolute = if args.relative { args.target_error * inst.l_tot() } else { args.target_error };
    let (state, status, steps, bound, trace): (Box<dyn Routing>, Status, String, f64, Option<String>) = match args.algorithm {
        Algorithm::Central | Algorithm::CentralFlow => {
            let mut cfg = CentralConfig::new(args.target_error)
                .relative(args.relative)
                .flow_every_iteration(args.algorithm == Algorithm::CentralFlow);
            if let Some(n) = args.max_steps {
                cfg = cfg.max_iterations(n);
            }
            let out = solve_central(&inst, &cfg)?;
            let bound = out.trace.records.last().map_or(0.0, |r| r.bound_e);
            (Box::new(out.state), out.status, format!("iterations: {}", out.iterations), bound, Some(out.trace.to_csv()))
        }
        Algorithm::Gossip => {
            let rounds = args.max_steps.unwrap_or((64 * m * m * m).max(1000));
            let cfg = GossipConfig::new(args.seed, rounds).stop_error(absolute);
            let out = run_gossip(&inst, &cfg)?;
            (Box::new(out.state), out.status, format!("rounds: {}", out.rounds), out.last_estimate.bound, Some(out.trace.to_csv()))
        }
        Algorithm::Oracle => {
            let sol = solve_oracle(&inst)?;
            let bound = inst.l_tot() * m as f64 * load_gap(&inst, &sol.loads)?.value;
            (Box::new(sol.assignment), Status::Converged, "iterations: 0".into(), bound, None)
        }
        Algorithm::Flow => {
            let Some(loads) = &args.loads else { bail!("--algorithm flow needs --loads") };
            let state = min_cost_state(&inst, loads)?;
            let bound = inst.l_tot() * m as f64 * load_gap(&inst, &state.loads)?.value;
            (Box::new(state), Status::Converged, "iterations: 0".into(), bound, None)
        }
    };
    if let Some(path) = &args.trace {
        let Some(csv) = &trace else { bail!("this algorithm writes no trace") };
        fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.output {
        fs::write(path, routing_to_json(&inst, state.as_ref())?).with_context(|| format!("writing {}", path.display()))?;
    }
    let loads = state.loads();
    let gap = load_gap(&inst, &loads)?;
    let label = match status {
        Status::Converged => "converged",
        Status::BudgetExceeded => "budget exceeded",
        Status::Stalled => "stalled",
    };
    println!("status: {label}");
    println!("objective: {}", objective(&inst, state.as_ref())?);
    println!("max_delta: {}", gap.value);
    println!("bound: {bound}");
    println!("{steps}");
    Ok(match status {
        Status::Converged => ExitCode::SUCCESS,
        Status::BudgetExceeded | Status::Stalled => ExitCode::from(2),
    })
}

fn check(args: CheckArgs) -> Result<ExitCode> {
    let inst = read_instance(&args.instance)?;
    let file = parse_routing(&read(&args.routing)?)?;
    let state = file.to_state(&inst)?;
    let report = check_kkt(&inst, &state, args.tolerance)?;
    println!("KKT: {}", if report.passed() { "pass" } else { "fail" });
    println!("objective: {}", objective(&inst, &state)?);
    println!("max_delta: {}", report.max_delta);
    println!("path_gap: {}", report.path_gap);
    println!("bound: {}", report.bound_e);
    for (i, j) in &report.violated_kkt_edges {
        println!("unbalanced edge: {i} -> {j}");
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn min_cost_state(inst: &Instance, loads: &[f64]) -> Result<EdgeFlowState> {
    if loads.len() != inst.m() {
        bail!("{} loads given for {} servers", loads.len(), inst.m());
    }
    let sol = optimize_network_flow(inst, loads)?;
    Ok(EdgeFlowState { r: sol.flow, loads: loads.to_vec() })
}

fn parse_samples(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut samples = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record?;
        let parsed = match (record.get(0), record.get(1), record.len()) {
            (Some(l), Some(t), 2) => l.parse::<f64>().ok().zip(t.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some(pair) => samples.push(pair),
            None if n == 0 => {}
            None => bail!("row {}: expected `load,time`, got {:?}", n + 1, record.iter().collect::<Vec<_>>()),
        }
    }
    Ok(samples)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_instance(path: &Path) -> Result<Instance> {
    parse_instance(&read(path)?).with_context(|| format!("in {}", path.display()))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}
