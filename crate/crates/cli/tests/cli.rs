use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_loopmix"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(text.lines().last().expect("some output")).expect("JSON line")
}

fn f(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("missing {key} in {v}"))
}

#[test]
fn pool_calculator() {
    let v = json(&["analyze", "pool", "--n", "3", "--k", "2", "--l", "1"]);
    assert!((f(&v, "p_initial") - 2.0 / 9.0).abs() < 1e-12);
    assert!((f(&v, "p_late") - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn calculators_report_json() {
    let v = json(&["analyze", "epsilon", "--p0", "0.5", "--p1", "0.25"]);
    assert!((f(&v, "epsilon") - 2f64.ln()).abs() < 1e-12);
    let v = json(&["analyze", "steady-pool", "--lambda", "100", "--mu", "10"]);
    assert_eq!(f(&v, "mean_pool_size"), 10.0);
    let v = json(&["analyze", "entropy-step", "--k", "8", "--l", "0"]);
    assert_eq!(f(&v, "entropy_bits"), 3.0);
    let v = json(&["analyze", "pool-loops", "--n", "3", "--k", "2", "--l", "1", "--mu", "1", "--lambda-m", "0"]);
    assert!((f(&v, "p_initial") - 2.0 / 9.0).abs() < 1e-12);
    let v = json(&["analyze", "blocking", "--s", "10", "--mu", "1", "--lambda-m", "1", "--lambda-r", "30"]);
    assert!((f(&v, "probability") - 0.25).abs() < 1e-12);
    let v = json(&["analyze", "delay-attack", "--k", "2", "--lambda", "1", "--delta", "1", "--t", "0"]);
    assert!((f(&v, "probability") - (-2f64).exp()).abs() < 1e-12);
    let v = json(&[
        "analyze", "link-rate", "--users", "10", "--mixes", "6", "--providers", "4", "--k", "2", "--ell", "3",
        "--lambda-p", "1", "--lambda-l", "1", "--lambda-d", "1",
    ]);
    assert!((f(&v, "link_rate") - 10.0 * 3.0 * 3.0 / 20.0).abs() < 1e-12);
}

#[test]
fn invalid_input_exits_1_and_usage_errors_exit_2() {
    let out = run(&["analyze", "pool", "--n", "1", "--k", "2", "--l", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert_eq!(run(&["analyze", "epsilon", "--p0", "0", "--p1", "0.5"]).status.code(), Some(1));
    assert_eq!(run(&["analyze", "pool", "--n", "3"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["analyze", "pool", "--n", "x", "--k", "1", "--l", "1"]).status.code(), Some(2));
}

#[test]
fn committed_vectors_check() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/testdata/vectors.toml");
    let v = json(&["vectors", "--check", path.to_str().unwrap()]);
    assert_eq!(v["verified"], 4);
    let emitted = run(&["vectors"]);
    assert_eq!(String::from_utf8(emitted.stdout).unwrap(), std::fs::read_to_string(&path).unwrap());
}

#[test]
fn tampered_vectors_fail_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/testdata/vectors.toml");
    let text = std::fs::read_to_string(path).unwrap().replacen("message = \"6869\"", "message = \"6868\"", 1);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, text).unwrap();
    assert_eq!(run(&["vectors", "--check", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn gen_directory_writes_loadable_files() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&["gen-directory", "--seed", "3", "--clients", "6", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!((v["mixes"].as_u64(), v["providers"].as_u64(), v["clients"].as_u64()), (Some(6), Some(4), Some(6)));
    let topology = loopmix::load_directory(dir.path().join("directory.toml")).unwrap();
    let secrets = loopmix::Secrets::load(dir.path().join("secrets.toml")).unwrap();
    for (_, m) in topology.mixes() {
        assert_eq!(secrets.get(&m.id).unwrap().public_key(), m.pubkey);
    }
    for c in &topology.clients {
        assert_eq!(secrets.get(&c.id).unwrap().public_key(), c.pubkey);
    }
}

#[test]
fn simulations_are_seeded_and_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();

    let args = ["sim", "pool", "--lambda", "50", "--mu", "5", "--duration", "500", "--seed", "4"];
    let a = json(&args);
    assert_eq!(a, json(&args));
    assert!((f(&a, "time_avg_pool") - 10.0).abs() < 1.0);

    let v = json(&["sim", "latency", "--n", "2000", "--seed", "5", "--out", &out("lat.csv")]);
    assert!((f(&v, "mean") - 2.0).abs() < 0.1);
    let csv = std::fs::read_to_string(out("lat.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("latency"));
    assert_eq!(csv.lines().count(), 2001);

    json(&["sim", "entropy", "--lambda", "10", "--mu", "1", "--duration", "50", "--out", &out("h.csv")]);
    assert!(std::fs::read_to_string(out("h.csv")).unwrap().starts_with("time,entropy\n"));

    json(&[
        "sim", "epsilon", "--users", "20", "--burn-in", "100", "--run-time", "20", "--reps", "2", "--seed", "7",
        "--sweep", "layers=1,2", "--out", &out("eps.csv"),
    ]);
    let csv = std::fs::read_to_string(out("eps.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "param,mean_eps,std");
    assert!(lines[1].starts_with("layers=1,") && lines[2].starts_with("layers=2,"));
}

#[test]
fn trace_file_feeds_the_trace_calculators() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("traces.json");
    let file = file.to_str().unwrap();
    let v = json(&["sim", "traces", "--seed", "1", "--out", file]);
    assert!(v["anonymity_condition"].is_boolean());
    let holds = json(&["analyze", "anon-condition", "--file", file]);
    assert_eq!(holds["holds"], v["anonymity_condition"]);
    let all_mixes = (0..3).flat_map(|l| (0..2).map(move |k| format!("mix-{l}-{k}"))).collect::<Vec<_>>().join(",");
    let blocked = json(&["analyze", "anon-condition", "--file", file, "--compromised", &all_mixes]);
    assert_eq!(blocked["holds"], false);
    let j = json(&["analyze", "trace-join", "--file", file, "--x", "0", "--y", "0", "--hop", "2"]);
    assert_eq!(j["joins"], true);
    assert_eq!(run(&["analyze", "trace-join", "--file", file, "--x", "0", "--y", "999999", "--hop", "2"]).status.code(), Some(1));
}

fn free_port_block(n: u16) -> u16 {
    for _ in 0..50 {
        let base = std::net::UdpSocket::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        if base < 60_000 && (0..n).all(|i| std::net::UdpSocket::bind(("127.0.0.1", base + i)).is_ok()) {
            return base;
        }
    }
    panic!("no free port block");
}

fn spawn(args: &[String]) -> Child {
    bin().args(args).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap()
}

fn last_json(child: Child) -> Value {
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "node failed: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

#[test]
fn node_processes_deliver_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap().to_owned();
    let port = free_port_block(3).to_string();
    json(&[
        "gen-directory", "--layers", "1", "--per-layer", "1", "--providers", "1", "--clients", "2", "--base-port", &port,
        "--seed", "8", "--out-dir", &d,
    ]);
    let dir_file: PathBuf = dir.path().join("directory.toml");
    let common = |id: &str, secs: &str| -> Vec<String> {
        [
            "--directory", dir_file.to_str().unwrap(), "--secrets", &format!("{d}/secrets.toml"), "--id", id,
            "--duration", secs, "--seed", "1",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    };
    let mut mix_args = vec!["mix".to_string()];
    mix_args.extend(common("mix-0-0", "5"));
    mix_args.extend(["--mu".into(), "20".into(), "--lambda-m".into(), "60".into()]);
    let mut provider_args = vec!["provider".to_string()];
    provider_args.extend(common("provider-0", "5"));
    let mix = spawn(&mix_args);
    let provider = spawn(&provider_args);
    std::thread::sleep(Duration::from_millis(300));

    let client = |id: &str, extra: &[&str]| {
        let mut a = vec!["client".to_string()];
        a.extend(common(id, "3.5"));
        a.extend(
            ["--lambda-p", "600", "--lambda-l", "60", "--lambda-d", "60", "--mu", "20", "--pull-period", "0.2"]
                .iter()
                .map(|s| s.to_string()),
        );
        a.extend(extra.iter().map(|s| s.to_string()));
        spawn(&a)
    };
    let sender = client("client-0", &["--send", "client-1=hello over udp"]);
    let receiver = client("client-1", &[]);

    let got = last_json(receiver);
    let sent = last_json(sender);
    let mix_report = last_json(mix);
    let provider_report = last_json(provider);
    assert_eq!(sent["counters"]["sent_real"], 1);
    assert_eq!(got["received"], serde_json::json!(["hello over udp"]));
    assert_eq!(mix_report["metrics"]["dropped_mac"], 0);
    assert!(mix_report["metrics"]["forwarded"].as_u64().unwrap() > 10);
    assert!(provider_report["metrics"]["received"].as_u64().unwrap() > 10);
}
