use std::path::Path;
use std::process::{Command, Output};

use xsync_harness::fuzz::{generate, FuzzConfig};
use xsync_harness::scenario::Topology;
use xsync_net::simnet::LinkConfig;

fn harness(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harness")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_report_and_timeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig");
    let o = harness(&["run", "--scenario", "fig-mv-replay", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("fig-mv-replay: seed=1 converged=true"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["resolved"]["A"]["A:1"]["pos"], serde_json::json!([-1.0, 0.0, 0.0]));
    let csv = std::fs::read_to_string(out.join("timeline.csv")).unwrap();
    assert!(csv.starts_with("t_ms,replica,brick,x,y,z\n"), "{csv}");
}

#[test]
fn seed_override_is_reported() {
    let o = harness(&["run", "--scenario", "relay-closure", "--seed", "77", "--out", "/dev/null/x"]);
    // The report directory cannot be created; the run itself is fine.
    assert_eq!(o.status.code(), Some(2));
    let o = harness(&["run", "--scenario", "relay-closure", "--seed", "77"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("seed=77"));
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn divergence_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = generate(3, &FuzzConfig { min_updates: 10, max_updates: 10, ..FuzzConfig::default() });
    s.topology = Topology::LocalRelay;
    s.links.clear();
    s.links.insert("default".into(), LinkConfig { partitions: vec![(0.0, 1e9)], ..LinkConfig::default() });
    s.exchange.settle_ms = 100.0;
    let path = write(dir.path(), "split.json", &s.to_json_pretty());
    let o = harness(&["run", "--scenario", &path]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("converged=false"));
}

#[test]
fn schema_errors_exit_two_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "bad.json", "{\n  \"name\": \"x\",\n  \"seed\": \"one\"\n}\n");
    let o = harness(&["run", "--scenario", &path]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
    let o = harness(&["run", "--scenario", "no-such-scenario"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_prints_table_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = harness(&["bench", "--reps", "1", "--jitter", "off", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("not physical networks"), "{text}");
    assert!(text.contains("a 73.6% reduction"), "{text}");
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
    assert!(csv.contains(",Quest to Quest - Hotspot,Remote relay,236.25,236.25,60"), "{csv}");
}

#[test]
fn bench_config_missing_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.json", r#"{"name": "c", "rows": [{"name": "r", "p2p": {"legsMs": [1]}}]}"#);
    let o = harness(&["bench", "--config", &path]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing localRelay, remoteRelay"));
}

#[test]
fn payload_flags_oversize() {
    let o = harness(&["payload", "--sizes", "64,16384,16385"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("size_bytes,topology,arch,mean_rtt_ms,p95_rtt_ms,samples,status\n"));
    assert_eq!(text.lines().filter(|l| l.ends_with(",ok")).count(), 6);
    assert_eq!(text.lines().filter(|l| l.contains("PayloadTooLarge")).count(), 3);
}

#[test]
fn fuzz_reports_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = harness(&["fuzz", "--seeds", "3", "--start", "40", "--dump", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("3 of 3 seeds converged"));
}
