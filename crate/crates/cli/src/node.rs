use clap::Args;
use std::net::UdpSocket;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use loopmix::net::{run_client, run_mix, run_provider, Clock, DriverOptions};
use loopmix::topology::{NodeRole, Secrets};
use loopmix::{load_directory, Client, ClientConfig, MixConfig, MixNode, Provider, Rates, Topology};

use crate::{print_json, rng_from, CliResult};

#[derive(Args)]
pub struct NodeArgs {
    /// Directory file (TOML).
    #[arg(long)]
    directory: PathBuf,
    /// Secrets file holding this node's key.
    #[arg(long)]
    secrets: PathBuf,
    #[arg(long)]
    id: String,
    /// Bind address; defaults to the address listed in the directory.
    #[arg(long)]
    listen: Option<String>,
    /// Stop after this many seconds; runs until killed otherwise.
    #[arg(long)]
    duration: Option<f64>,
    /// Seconds between JSON metrics lines on stdout.
    #[arg(long, default_value_t = 10.0)]
    metrics_interval: f64,
    /// Deterministic randomness for testing. Never use in deployment.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct MixArgs {
    #[command(flatten)]
    node: NodeArgs,
    /// Loop cover rate, messages per minute.
    #[arg(long, default_value_t = 1.0)]
    lambda_m: f64,
    /// Per-hop delay rate for the node's own loops, per second.
    #[arg(long, default_value_t = 2.0)]
    mu: f64,
    #[arg(long, default_value_t = 100_000)]
    watermark: usize,
    /// Minimum fraction of loops that must return per health window.
    #[arg(long, default_value_t = 0.8)]
    loop_return_fraction: f64,
    #[arg(long, default_value_t = 60.0)]
    health_window: f64,
}

#[derive(Args)]
pub struct ProviderArgs {
    #[command(flatten)]
    node: NodeArgs,
    /// Items returned per pull.
    #[arg(long, default_value_t = loopmix::provider::DEFAULT_PULL_COUNT)]
    pull_count: usize,
}

#[derive(Args)]
pub struct ClientArgs {
    #[command(flatten)]
    node: NodeArgs,
    /// Payload stream rate, messages per minute.
    #[arg(long, default_value_t = 3.0)]
    lambda_p: f64,
    /// Loop cover rate, messages per minute.
    #[arg(long, default_value_t = 1.0)]
    lambda_l: f64,
    /// Drop cover rate, messages per minute.
    #[arg(long, default_value_t = 1.0)]
    lambda_d: f64,
    /// Per-hop delay rate, per second.
    #[arg(long, default_value_t = 2.0)]
    mu: f64,
    #[arg(long, default_value_t = loopmix::client::DEFAULT_PULL_PERIOD_S)]
    pull_period: f64,
    /// Queue a message before starting; repeatable.
    #[arg(long = "send", value_name = "RECIPIENT=TEXT")]
    send: Vec<String>,
}

struct Loaded {
    topology: Topology,
    secrets: Secrets,
    stop: Arc<AtomicBool>,
}

fn load(args: &NodeArgs) -> Result<Loaded, Box<dyn std::error::Error>> {
    let topology = load_directory(&args.directory)?;
    let secrets = Secrets::load(&args.secrets)?;
    let stop = Arc::new(AtomicBool::new(false));
    if let Some(d) = args.duration {
        if !(d >= 0.0 && d.is_finite()) {
            return Err("--duration must be a finite number of seconds".into());
        }
        let stop = stop.clone();
        std::thread::spawn(move || {
            std::thread::sleep(Duration::from_secs_f64(d));
            stop.store(true, Ordering::Relaxed);
        });
    }
    Ok(Loaded { topology, secrets, stop })
}

fn bind(args: &NodeArgs, listed: &str) -> Result<UdpSocket, Box<dyn std::error::Error>> {
    let addr = args.listen.as_deref().unwrap_or(listed);
    Ok(UdpSocket::bind(addr).map_err(|e| format!("cannot bind {addr}: {e}"))?)
}

fn driver_options(args: &NodeArgs, health_window: Option<f64>) -> DriverOptions {
    DriverOptions {
        metrics_interval_s: Some(args.metrics_interval),
        metrics_sink: Some(Box::new(|line: &str| println!("{line}"))),
        health_window_s: health_window,
    }
}

pub fn mix(a: MixArgs) -> CliResult {
    let l = load(&a.node)?;
    let Some((NodeRole::Mix { layer }, me)) = l.topology.node(&a.node.id) else {
        return Err(format!("'{}' is not a mix in the directory", a.node.id).into());
    };
    let rates = Rates { lambda_m: a.lambda_m / 60.0, mu: a.mu, ..Rates::default() };
    rates.validate()?;
    let mut cfg = MixConfig::new(&a.node.id, l.secrets.get(&a.node.id)?, layer);
    cfg.lambda_m = rates.lambda_m;
    cfg.mu = rates.mu;
    cfg.queue_high_watermark = a.watermark;
    cfg.loop_return_fraction_r = a.loop_return_fraction;
    let socket = bind(&a.node, &me.addr)?;
    let mut rng = rng_from(a.node.seed);
    let node = MixNode::new(cfg, &mut rng);
    let opts = driver_options(&a.node, Some(a.health_window));
    let report = run_mix(socket, node, &l.topology, &mut rng, Clock::new(), &l.stop, opts)?;
    print_json(&serde_json::json!({
        "id": report.id,
        "metrics": report.metrics,
        "loop_latencies": report.loop_latencies,
    }))
}

pub fn provider(a: ProviderArgs) -> CliResult {
    let l = load(&a.node)?;
    let me = l
        .topology
        .provider(&a.node.id)
        .ok_or_else(|| format!("'{}' is not a provider in the directory", a.node.id))?;
    let mut p = Provider::new(&a.node.id, l.secrets.get(&a.node.id)?);
    p.pull_count = a.pull_count;
    p.register_from(&l.topology);
    let socket = bind(&a.node, &me.addr)?;
    let mut rng = rng_from(a.node.seed);
    let opts = driver_options(&a.node, None);
    let report = run_provider(socket, p, &mut rng, Clock::new(), &l.stop, opts)?;
    print_json(&serde_json::json!({ "id": report.id, "metrics": report.metrics }))
}

pub fn client(a: ClientArgs) -> CliResult {
    let l = load(&a.node)?;
    let me = l
        .topology
        .client(&a.node.id)
        .ok_or_else(|| format!("'{}' is not a client in the directory", a.node.id))?;
    let rates = Rates {
        lambda_p: a.lambda_p / 60.0,
        lambda_l: a.lambda_l / 60.0,
        lambda_d: a.lambda_d / 60.0,
        lambda_m: 0.0,
        mu: a.mu,
    };
    rates.validate()?;
    if a.pull_period.is_nan() || a.pull_period <= 0.0 {
        return Err("--pull-period must be > 0".into());
    }
    let cfg = ClientConfig {
        id: me.id.clone(),
        secret_key: l.secrets.get(&me.id)?,
        provider_id: me.provider_id.clone(),
        token: me.token,
        rates,
        pull_period_s: a.pull_period,
        debug_type_flags: false,
    };
    let mut rng = rng_from(a.node.seed);
    let mut client = Client::new(cfg, &mut rng);
    for s in &a.send {
        let (to, text) = s.split_once('=').ok_or_else(|| format!("--send expects RECIPIENT=TEXT, got '{s}'"))?;
        if l.topology.client(to).is_none() {
            return Err(format!("unknown recipient '{to}'").into());
        }
        client.enqueue_message(to, text.as_bytes().to_vec())?;
    }
    let socket = UdpSocket::bind(a.node.listen.as_deref().unwrap_or("0.0.0.0:0"))?;
    let report = run_client(socket, client, &l.topology, &mut rng, Clock::new(), &l.stop)?;
    let received: Vec<String> = report.received.iter().map(|m| String::from_utf8_lossy(m).into_owned()).collect();
    print_json(&serde_json::json!({
        "id": report.id,
        "counters": report.counters,
        "received": received,
        "loop_rtts": report.loop_rtts,
    }))
}
