use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn garou(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_garou"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario(dir: &Path, body: &str) -> String {
    let path = dir.join("scenario.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const HONEST: &str = r#"
name = "honest"
nodes = 10
epoch_duration_ms = 10000
until_ms = 12000

[workload]
rate_tps = 50.0
"#;

const WITHHOLDING: &str = r#"
name = "withholding"
nodes = 6
epoch_duration_ms = 2000
until_ms = 8000

[[adversary]]
node = "genesis_leader"
times = 1
deviation = { kind = "withhold_epoch_state" }
"#;

fn metrics(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_outputs_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario(tmp.path(), HONEST);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = garou(&[
            "run",
            "--config",
            &cfg,
            "--seed",
            "4",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["trace.jsonl", "metrics.json", "metrics.csv"] {
            assert!(out.join(f).is_file(), "{f} missing");
        }
    }
    for f in ["trace.jsonl", "metrics.json", "metrics.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let m = metrics(&a);
    assert_eq!(m["seed"], 4);
    assert_eq!(m["nodes"], 10);
    assert_eq!(m["msgs_per_transfer"], 5.0);
    assert_eq!(m["msgs_per_consensus"], 30.0);
}

#[test]
fn adversarial_run_reports_rollback() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario(tmp.path(), WITHHOLDING);
    let out = tmp.path().join("out");
    let o = garou(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(metrics(&out)["rollbacks"].as_u64().unwrap() >= 1);
}

#[test]
fn replay_checks_stored_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario(tmp.path(), HONEST);
    let out = tmp.path().join("out");
    assert!(
        garou(&["run", "--config", &cfg, "--out", out.to_str().unwrap()])
            .status
            .success()
    );
    let trace = out.join("trace.jsonl");
    let o = garou(&["replay", trace.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    let edited = fs::read_to_string(out.join("metrics.json"))
        .unwrap()
        .replacen("\"rollbacks\": 0", "\"rollbacks\": 3", 1);
    fs::write(out.join("metrics.json"), edited).unwrap();
    assert_eq!(
        garou(&["replay", trace.to_str().unwrap()]).status.code(),
        Some(1)
    );

    fs::write(&trace, "not a trace\n").unwrap();
    assert_eq!(
        garou(&["replay", trace.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn bad_input_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    let missing = tmp.path().join("missing.toml");
    assert_eq!(
        garou(&["run", "--config", missing.to_str().unwrap(), "--out", out])
            .status
            .code(),
        Some(2)
    );
    let cfg = scenario(tmp.path(), "nodes = 1\n");
    assert_eq!(
        garou(&["run", "--config", &cfg, "--out", out])
            .status
            .code(),
        Some(2)
    );
    let cfg = scenario(tmp.path(), "nodes = 4\nbogus = true\n");
    assert_eq!(
        garou(&["run", "--config", &cfg, "--out", out])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        garou(&["sweep", "--nodes", "ten", "--out", out])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(garou(&["replay"]).status.code(), Some(2));
}

#[test]
fn sweep_marks_cells_over_cap() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = garou(&[
        "sweep",
        "--nodes",
        "5,301",
        "--epoch-durations",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("nodes,epoch_duration_s,status,throughput"));
    assert!(lines[1].starts_with("5,2,ok,"));
    assert!(lines[2].starts_with("301,2,over cap,"));
}

#[test]
fn attack_suite_passes_and_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = garou(&[
        "attack-suite",
        "--runs",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    let stdout = String::from_utf8_lossy(&o.stdout);
    for name in [
        "silent_signer",
        "withholding_leader",
        "double_spend_honest_leader",
    ] {
        assert!(stdout.contains(name), "{name} missing");
    }
    let csv = fs::read_to_string(out.join("attack_suite.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);
    assert!(csv
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(2) == Some("true")));
}
