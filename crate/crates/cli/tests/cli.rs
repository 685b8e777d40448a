use std::path::Path;
use std::process::{Command, Output};

fn marketsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marketsim"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = "[sim]\nn_processors = 12\nn_consumers = 30\nsteps = 10\niterations = 2\n";

#[test]
fn print_defaults_is_a_valid_scenario() {
    let out = marketsim(&["--print-defaults"]);
    assert!(out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        dir.path(),
        "defaults.toml",
        &String::from_utf8(out.stdout).unwrap(),
    );
    let out_dir = dir.path().join("out");
    let run = marketsim(&[
        "epochs",
        "--scenario",
        &path,
        "--epochs",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
}

#[test]
fn unknown_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "bad.toml", "[economy]\nepochz = 3\n");
    let out = marketsim(&["epochs", "--scenario", &path]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}

#[test]
fn invalid_value_exits_with_config_error_naming_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "bad.toml", "[sim]\np_min_rep_consumer = 1.5\n");
    let out = marketsim(&["simulate", "--scenario", &path]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sim.p_min_rep_consumer"));
}

#[test]
fn rejected_commitment_names_its_entry() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
[economy]
accounts = [{ id = "a", balance = 1000 }]
providers = [{ id = "a", compute = { cpu_single = 10.0, cpu_multi = 10.0, ram = 10.0, storage = 10.0 } }]
commitments = [{ committer = "a", stake = 5000, cooldown = 10, fee = 0.1, committed = { cpu_single = 1.0, cpu_multi = 1.0, ram = 1.0, storage = 1.0 } }]
shortfalls = []
unstake = []
"#;
    let path = write(dir.path(), "eco.toml", text);
    let out = marketsim(&["epochs", "--scenario", &path]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("economy.commitments[0]"));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = write(dir.path(), "file", "");
    let out = marketsim(&[
        "epochs",
        "--epochs",
        "1",
        "--out",
        &format!("{blocker}/sub"),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_writes_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "s.toml", SMALL);
    let out_dir = dir.path().join("out");
    let out = marketsim(&[
        "simulate",
        "--scenario",
        &scenario,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let processors = std::fs::read_to_string(out_dir.join("processors.csv")).unwrap();
    let mut lines = processors.lines();
    assert_eq!(
        lines.next(),
        Some("scenario,iteration,processor,group,reputation,cumulative_reward")
    );
    assert_eq!(lines.count(), 24);
    let trajectory = std::fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert_eq!(trajectory.lines().count(), 1 + 10 * 3);

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["scenario_sha256"].as_str().unwrap().len(), 64);
    for name in ["processors.csv", "summary.csv", "trajectory.csv"] {
        assert!(
            manifest["files"][name].is_string(),
            "{name} missing from manifest"
        );
    }
}

#[test]
fn seed_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "s.toml", SMALL);
    let mut summaries = Vec::new();
    for seed in ["1", "2"] {
        let out_dir = dir.path().join(seed);
        let out = marketsim(&[
            "simulate",
            "--scenario",
            &scenario,
            "--seed",
            seed,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        summaries.push(std::fs::read(out_dir.join("processors.csv")).unwrap());
    }
    assert_ne!(summaries[0], summaries[1]);
}

#[test]
fn epochs_summary_reports_conservation() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = marketsim(&[
        "epochs",
        "--epochs",
        "12",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let value = |metric: &str| -> u128 {
        summary
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{metric},")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert_eq!(value("emitted"), 12 * 1_000_000_000);
    assert_eq!(value("conserved"), 1);
    assert!(value("burned") > 0, "default shortfall should slash");
    assert_eq!(
        value("liquid") + value("staked") + value("treasury") + value("collators"),
        value("total_supply")
    );
    assert_eq!(
        value("initial_supply") + value("emitted"),
        value("total_supply") + value("burned")
    );
}

#[test]
fn match_explains_unmatched_deployments() {
    let dir = tempfile::tempdir().unwrap();
    let deployments = write(
        dir.path(),
        "d.json",
        r#"[
  {"id": 1, "consumer": "c", "schedule": {"start": 0, "end": 100, "interval": 50, "duration": 10, "max_start_delay": 5}, "reward_per_execution": 100, "min_reputation": 0.9},
  {"id": 2, "consumer": "c", "schedule": {"start": 0, "end": 100, "interval": 50, "duration": 10, "max_start_delay": 5}, "reward_per_execution": 100},
  {"id": 3, "consumer": "c", "schedule": {"start": 0, "end": 100, "interval": 50, "duration": 10, "max_start_delay": 0}, "reward_per_execution": 100}
]"#,
    );
    let ads = write(
        dir.path(),
        "a.json",
        r#"[
  {"advertisement": {"processor": "p1", "ask_price_per_execution": 80},
   "attestation": {"processor": "p1", "device_model": "m", "security_level": 1, "issued_at": 0, "expires_at": 1000}},
  {"advertisement": {"processor": "p2", "ask_price_per_execution": 120},
   "attestation": {"processor": "p2", "device_model": "m", "security_level": 1, "issued_at": 0, "expires_at": 1000}}
]"#,
    );
    let out = marketsim(&[
        "match",
        "--deployments",
        &deployments,
        "--advertisements",
        &ads,
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let records: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 3);

    assert_eq!(records[0]["status"], "unmatched");
    assert_eq!(
        records[0]["reasons"],
        serde_json::json!(["p1: min_reputation", "p2: price"])
    );

    assert_eq!(records[1]["status"], "assigned");
    assert_eq!(records[1]["processor"], "p1");
    assert_eq!(records[1]["start_delay"], 0);
    assert_eq!(records[1]["executions"], 2);

    // p1's calendar is now booked at the only allowed start
    assert_eq!(records[2]["status"], "unmatched");
    assert_eq!(
        records[2]["reasons"],
        serde_json::json!(["p1: no feasible start delay", "p2: price"])
    );
}

#[test]
fn malformed_candidates_exit_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let deployments = write(dir.path(), "d.json", "[]");
    let ads = write(
        dir.path(),
        "a.json",
        r#"[{"advertisement": {"processor": "p1"}}]"#,
    );
    let out = marketsim(&[
        "match",
        "--deployments",
        &deployments,
        "--advertisements",
        &ads,
    ]);
    assert_eq!(out.status.code(), Some(2));
}
