use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn geobalance(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geobalance")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn field(text: &str, key: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no {key} in {text}"));
    line[key.len()..].trim_start_matches(':').trim().parse().unwrap()
}

#[test]
fn central_solves_the_batch_fixture() {
    let batch = fixture("batch.json");
    let out = geobalance(&["solve", "--instance", batch.to_str().unwrap(), "--algorithm", "central", "--target-error", "1e-6"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!((field(&stdout(&out), "objective") - 34.0).abs() < 1e-6);
}

#[test]
fn gossip_traces_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mixed = fixture("mixed.json");
    let run = |name: &str| {
        let trace = dir.path().join(name);
        let routing = dir.path().join(format!("{name}.json"));
        let out = geobalance(&[
            "solve",
            "--instance",
            mixed.to_str().unwrap(),
            "--algorithm",
            "gossip",
            "--seed",
            "1",
            "--trace",
            trace.to_str().unwrap(),
            "--output",
            routing.to_str().unwrap(),
        ]);
        assert!(out.status.code() == Some(0) || out.status.code() == Some(2));
        (fs::read(trace).unwrap(), fs::read(routing).unwrap())
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    assert!(String::from_utf8_lossy(&a.0).starts_with("round,initiator,partner,objective,impr,estimate_bound\n"));
    assert_eq!(a, b);
}

#[test]
fn solved_routing_checks_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mixed = fixture("mixed.json");
    let routing = dir.path().join("r.json");
    for algorithm in ["central", "central-flow", "oracle"] {
        let out = geobalance(&[
            "solve",
            "--instance",
            mixed.to_str().unwrap(),
            "--algorithm",
            algorithm,
            "--target-error",
            "1e-9",
            "--output",
            routing.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{algorithm}: {}", String::from_utf8_lossy(&out.stderr));
        let solved = field(&stdout(&out), "objective");
        let check = geobalance(&["check", "--instance", mixed.to_str().unwrap(), "--routing", routing.to_str().unwrap()]);
        let text = stdout(&check);
        assert!(text.starts_with("KKT: pass"), "{algorithm}: {text}");
        let checked = field(&text, "objective");
        assert!((solved - checked).abs() <= 1e-12 * solved.abs(), "{algorithm}: {solved} vs {checked}");
    }
}

#[test]
fn a_poor_routing_fails_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let batch = fixture("batch.json");
    let routing = dir.path().join("r.json");
    let out = geobalance(&["flow", "--instance", batch.to_str().unwrap(), "--loads", "9,1", "--output", routing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let check = geobalance(&["check", "--instance", batch.to_str().unwrap(), "--routing", routing.to_str().unwrap()]);
    assert_eq!(check.status.code(), Some(1));
    assert!(stdout(&check).starts_with("KKT: fail"));
}

#[test]
fn exhausted_budget_exits_with_two() {
    let mixed = fixture("mixed.json");
    let out = geobalance(&["solve", "--instance", mixed.to_str().unwrap(), "--max-steps", "1", "--target-error", "1e-12"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("status: budget exceeded"));
}

#[test]
fn invalid_instances_exit_with_one_and_list_problems() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let text = fs::read_to_string(fixture("batch.json")).unwrap().replace("[[0, 2]", "[[1, 2]").replace("\"l_max\": 20}", "\"l_max\": 20, \"t_max\": 3}");
    fs::write(&path, text).unwrap();
    let out = geobalance(&["solve", "--instance", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("diagonal must be zero"), "{err}");
    assert!(err.contains("exactly one"), "{err}");

    fs::write(&path, "{\"servers\": [}").unwrap();
    let out = geobalance(&["check", "--instance", path.to_str().unwrap(), "--routing", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1, column"));
}

#[test]
fn oracle_and_flow_print_routings() {
    let batch = fixture("batch.json");
    let out = geobalance(&["oracle", "--instance", batch.to_str().unwrap()]);
    let routing: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((routing["objective"].as_f64().unwrap() - 34.0).abs() < 1e-6);
    assert_eq!(routing["representation"], "origin");

    let out = geobalance(&["flow", "--instance", batch.to_str().unwrap(), "--loads", "6,4"]);
    let routing: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(routing["r"][0][1].as_f64(), Some(4.0));
    assert_eq!(routing["representation"], "edge_flow");
}

#[test]
fn fit_reads_samples() {
    let out = geobalance(&["fit", "--samples", fixture("samples.csv").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let spec: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(spec["kind"], "empirical");
    assert_eq!(spec["l_max"].as_f64(), Some(6.0));
}
