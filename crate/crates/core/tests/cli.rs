use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_engage");
const SCENARIO: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/scenarios/figure3.scenario");
const DEFAULT_SCENARIO: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/scenarios/default.scenario");
const HOSTING: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/hosting.annotations");

fn engage(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("ENGAGE_LIBRARY").env_remove("ENGAGE_SCENE").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn run_into(dir: &Path, mode: &str, seed: &str) -> Output {
    engage(&["run", "--scenario", SCENARIO, "--mode", mode, "--seed", seed, "--out", dir.to_str().unwrap()])
}

#[test]
fn run_writes_reparseable_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_into(tmp.path(), "mover", "0");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let transcript = fs::read_to_string(tmp.path().join("transcript.txt")).unwrap();
    assert_eq!(transcript, include_str!("../fixtures/figure3.transcript"));
    let trace = fs::read_to_string(tmp.path().join("trace.jsonl")).unwrap();
    assert!(engage::protocol::decode_trace(&trace).is_ok());
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["shared_looking_pct"].as_f64().is_some());
    let history = fs::read_to_string(tmp.path().join("history.txt")).unwrap();
    engage::discourse::structural_match(&history, include_str!("../fixtures/figure3.history")).unwrap();
    assert!(tmp.path().join("log.txt").exists());
}

#[test]
fn run_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_into(a.path(), "talker", "7");
    run_into(b.path(), "talker", "7");
    for f in ["trace.jsonl", "transcript.txt", "history.txt", "metrics.json", "log.txt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn replay_check_accepts_a_recorded_run() {
    let tmp = tempfile::tempdir().unwrap();
    run_into(tmp.path(), "mover", "0");
    let trace = tmp.path().join("trace.jsonl");
    let o = engage(&["replay", trace.to_str().unwrap(), "--check"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("Mel: Hi, I'm Mel a robotic penguin.\n"));
}

#[test]
fn replay_check_flags_a_doctored_trace() {
    let tmp = tempfile::tempdir().unwrap();
    run_into(tmp.path(), "mover", "0");
    let path = tmp.path().join("trace.jsonl");
    let text = fs::read_to_string(&path).unwrap().replacen("robotic penguin", "robotic puffin", 1);
    fs::write(&path, text).unwrap();
    let o = engage(&["replay", path.to_str().unwrap(), "--check"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverges"));
}

#[test]
fn metrics_on_annotations() {
    let o = engage(&["metrics", HOSTING, "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let counts = &v[0]["tracking"]["counts"];
    assert_eq!((counts["tracked"].as_u64(), counts["uncategorized"].as_u64()), (Some(45), Some(12)));
    let o = engage(&["metrics", HOSTING]);
    assert!(stdout(&o).contains("tracked"));
}

#[test]
fn metrics_compare_runs_anova() {
    let root = tempfile::tempdir().unwrap();
    for (mode, dir) in [("mover", "a"), ("talker", "b")] {
        let d = root.path().join(dir);
        fs::create_dir(&d).unwrap();
        for seed in 0..4 {
            let run = root.path().join(format!("{mode}{seed}"));
            let seed = seed.to_string();
            engage(&["run", "--scenario", DEFAULT_SCENARIO, "--mode", mode, "--seed", &seed, "--out", run.to_str().unwrap()]);
            fs::copy(run.join("trace.jsonl"), d.join(format!("{seed}.trace"))).unwrap();
        }
    }
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let o = engage(&["metrics", "--compare", a.to_str().unwrap(), b.to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let shared = rows.as_array().unwrap().iter().find(|r| r["measure"] == "shared_looking_pct").unwrap();
    assert_eq!(shared["anova"]["df_within"], 6);
    assert!(shared["mean_a"].as_f64().unwrap() > shared["mean_b"].as_f64().unwrap());
}

#[test]
fn empty_trace_gives_a_zero_report() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.trace");
    fs::write(&empty, "").unwrap();
    let o = engage(&["metrics", empty.to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v[0]["trace"]["interaction_time"], 0.0);
    assert!(v[0]["trace"]["shared_looking_pct"].is_null());
}

#[test]
fn bad_input_exits_with_validation_code() {
    assert_eq!(engage(&["run", "--scenario", "/nonexistent/x.scenario"]).status.code(), Some(1));
    assert_eq!(engage(&["frobnicate"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.trace");
    fs::write(&bad, "{\"seq\":1}\n").unwrap();
    let o = engage(&["metrics", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.trace:1"));
    assert_eq!(engage(&["metrics"]).status.code(), Some(1));
}

#[test]
fn nod_corpus_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("nods");
    let o = engage(&["gen-nod-corpus", "--out", dir.to_str().unwrap(), "--count", "40"]);
    assert_eq!(o.status.code(), Some(0));
    let o = engage(&["eval-nod", dir.to_str().unwrap()]);
    assert!(stdout(&o).starts_with("traces 40 threshold 0.50"));
    let shipped = engage(&["eval-nod", concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/nods")]);
    assert_eq!(stdout(&shipped), "traces 200 threshold 0.50 precision 0.990 recall 1.000\n");
}

#[test]
fn serve_hosts_one_session_and_exits() {
    let tmp = tempfile::tempdir().unwrap();
    let mut child = Command::new(BIN)
        .args(["serve", "--port", "0", "--sessions", "1", "--speed", "50", "--out", tmp.path().to_str().unwrap()])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut out = BufReader::new(child.stdout.take().unwrap());
    let mut line = String::new();
    out.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    {
        let mut s = TcpStream::connect(&addr).unwrap();
        s.write_all(b"{\"seq\":1,\"t\":0,\"kind\":\"ModeSelect\",\"payload\":{\"mode\":\"talker\"},\"src\":\"client\"}\n").unwrap();
        s.write_all(b"{\"seq\":2,\"t\":0,\"kind\":\"FaceFound\",\"payload\":{\"yaw\":0.0,\"pitch\":0.0},\"src\":\"client\"}\n").unwrap();
        let mut r = BufReader::new(s.try_clone().unwrap());
        let mut l = String::new();
        while r.read_line(&mut l).unwrap() > 0 && !l.contains("\"Say\"") {
            l.clear();
        }
    }
    let status = child.wait().unwrap();
    assert!(status.success());
    let mut rest = String::new();
    std::io::Read::read_to_string(&mut out, &mut rest).unwrap();
    assert!(rest.contains("session 1:"));
    let trace = fs::read_to_string(tmp.path().join("session-001.trace")).unwrap();
    assert!(engage::protocol::decode_trace(&trace).is_ok());
}

#[test]
fn serve_reports_a_taken_port() {
    let busy = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    let o = engage(&["serve", "--port", &port, "--sessions", "1"]);
    assert_eq!(o.status.code(), Some(2));
}
