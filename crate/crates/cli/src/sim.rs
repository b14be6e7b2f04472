use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use loopmix::analysis::{anonymity_condition_holds, Trace};
use loopmix::simulator::{
    run_entropy_experiment, run_epsilon_reps, run_latency_experiment, run_pool_experiment, run_trace_simulation,
    SimConfig, TraceKind, TraceSimConfig,
};
use loopmix::stats;
use loopmix::Rates;

use crate::{print_json, write_file, CliResult};

#[derive(Subcommand)]
pub enum SimCommand {
    /// Entropy of a single mix's output under Poisson arrivals.
    Entropy(EntropyArgs),
    /// Sender likelihood difference through a layered network.
    Epsilon(EpsilonArgs),
    /// End-to-end latency over Poisson-delay hops.
    Latency(LatencyArgs),
    /// Pool occupancy and output process of one mix.
    Pool(PoolArgs),
    /// Link-level traces for the trace-exchange condition.
    Traces(TracesArgs),
}

#[derive(Args)]
pub struct EntropyArgs {
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    mu: f64,
    #[arg(long, default_value_t = 200.0)]
    duration: f64,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV `time,entropy` of the first repetition.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EpsilonArgs {
    #[arg(long, default_value_t = 100)]
    users: usize,
    /// Per-sender message rate.
    #[arg(long, default_value_t = 2.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 3)]
    per_layer: usize,
    /// Fraction of mixes that are corrupt.
    #[arg(long, default_value_t = 0.0)]
    corrupt: f64,
    #[arg(long, default_value_t = 2500.0)]
    burn_in: f64,
    #[arg(long, default_value_t = 100.0)]
    run_time: f64,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Vary one parameter: `mu=0.5,1,2`, `layers=1,2,3,4`, `corrupt=0,0.3`, `lambda=...`.
    #[arg(long)]
    sweep: Option<String>,
    /// CSV `param,mean_eps,std`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct LatencyArgs {
    #[arg(long, default_value_t = 2.0)]
    mu: f64,
    #[arg(long, default_value_t = 4)]
    hops: usize,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Fixed per-hop processing time added to each delay.
    #[arg(long, default_value_t = 0.0)]
    processing: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV with one `latency` per line.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PoolArgs {
    #[arg(long, default_value_t = 100.0)]
    lambda: f64,
    #[arg(long, default_value_t = 10.0)]
    mu: f64,
    #[arg(long, default_value_t = 10_000.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
pub struct TracesArgs {
    #[arg(long, default_value_t = 10)]
    clients: usize,
    #[arg(long, default_value_t = 2)]
    providers: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    per_layer: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda_p: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda_l: f64,
    #[arg(long, default_value_t = 5.0)]
    lambda_d: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 20.0)]
    duration: f64,
    /// When clients 0 and 1 send the challenge messages.
    #[arg(long, default_value_t = 10.0)]
    challenge_time: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON trace file for `analyze trace-join` and `analyze anon-condition`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Trace file shared with the `analyze` trace subcommands.
#[derive(Serialize, Deserialize)]
pub struct TraceFile {
    pub traces: Vec<Trace>,
    #[serde(default)]
    pub challenge: Option<(Trace, Trace)>,
    #[serde(default)]
    pub drops: Vec<Trace>,
}

pub fn run(cmd: SimCommand) -> CliResult {
    match cmd {
        SimCommand::Entropy(a) => entropy(a),
        SimCommand::Epsilon(a) => epsilon(a),
        SimCommand::Latency(a) => latency(a),
        SimCommand::Pool(a) => pool(a),
        SimCommand::Traces(a) => traces(a),
    }
}

fn entropy(a: EntropyArgs) -> CliResult {
    if a.reps == 0 {
        return Err("--reps must be >= 1".into());
    }
    let mut means = Vec::with_capacity(a.reps);
    for r in 0..a.reps {
        let run = run_entropy_experiment(a.lambda, a.mu, a.duration, a.seed.wrapping_add(r as u64))?;
        if r == 0 {
            if let Some(path) = &a.out {
                let mut csv = String::from("time,entropy\n");
                for (t, h) in &run.series {
                    writeln!(csv, "{t},{h}")?;
                }
                write_file(path, &csv)?;
            }
        }
        means.push(run.steady_mean);
    }
    print_json(&serde_json::json!({
        "lambda": a.lambda,
        "mu": a.mu,
        "reps": a.reps,
        "steady_entropy": stats::mean(&means),
        "std": stats::std_dev(&means),
    }))
}

fn parse_sweep(s: &str) -> Result<(String, Vec<f64>), Box<dyn std::error::Error>> {
    let (name, values) = s.split_once('=').ok_or("--sweep expects NAME=v1,v2,...")?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("bad sweep value '{v}': {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((name.trim().to_owned(), values))
}

fn epsilon(a: EpsilonArgs) -> CliResult {
    let base = SimConfig {
        seed: a.seed,
        users: a.users,
        rates: Rates { lambda_p: a.lambda, lambda_l: 0.0, lambda_d: 0.0, lambda_m: 0.0, mu: a.mu },
        layers: a.layers,
        nodes_per_layer: a.per_layer,
        corrupt_fraction: a.corrupt,
        burn_in: a.burn_in,
        run_time: a.run_time,
        challenge: (0, 1),
    };
    let configs: Vec<(String, SimConfig)> = match &a.sweep {
        None => vec![(format!("mu={}", a.mu), base)],
        Some(s) => {
            let (name, values) = parse_sweep(s)?;
            values
                .into_iter()
                .map(|v| {
                    let mut c = base;
                    match name.as_str() {
                        "mu" => c.rates.mu = v,
                        "lambda" => c.rates.lambda_p = v,
                        "layers" => c.layers = v as usize,
                        "corrupt" => c.corrupt_fraction = v,
                        other => return Err(format!("cannot sweep '{other}'")),
                    }
                    Ok((format!("{name}={v}"), c))
                })
                .collect::<Result<_, _>>()?
        }
    };
    let mut csv = String::from("param,mean_eps,std\n");
    let mut rows = Vec::new();
    for (label, cfg) in configs {
        let s = run_epsilon_reps(&cfg, a.reps)?;
        writeln!(csv, "{label},{},{}", s.mean, s.std)?;
        rows.push(serde_json::json!({ "param": label, "mean_eps": s.mean, "std": s.std }));
    }
    match &a.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    if a.out.is_some() {
        print_json(&rows)?;
    }
    Ok(())
}

fn latency(a: LatencyArgs) -> CliResult {
    let xs = run_latency_experiment(a.mu, a.hops, a.n, a.processing, a.seed)?;
    if let Some(path) = &a.out {
        let mut csv = String::from("latency\n");
        for x in &xs {
            writeln!(csv, "{x}")?;
        }
        write_file(path, &csv)?;
    }
    let shift = a.processing * a.hops as f64;
    let shifted: Vec<f64> = xs.iter().map(|x| x - shift).collect();
    let ks = stats::ks_one_sample(&shifted, stats::gamma_cdf(a.hops as f64, a.mu));
    print_json(&serde_json::json!({
        "n": xs.len(),
        "mean": stats::mean(&xs),
        "std": stats::std_dev(&xs),
        "ks_gamma_statistic": ks.statistic,
        "ks_gamma_p_value": ks.p_value,
    }))
}

fn pool(a: PoolArgs) -> CliResult {
    let run = run_pool_experiment(a.lambda, a.mu, a.duration, a.seed)?;
    let expected = a.lambda / a.mu;
    let chi = stats::chi_square_poisson(&run.samples, expected);
    let ks = stats::ks_one_sample(&run.departure_gaps, stats::exp_cdf(a.lambda));
    print_json(&serde_json::json!({
        "time_avg_pool": run.time_avg,
        "expected": expected,
        "chi2_poisson_statistic": chi.statistic,
        "chi2_poisson_p_value": chi.p_value,
        "ks_departure_gap_statistic": ks.statistic,
        "ks_departure_gap_p_value": ks.p_value,
    }))
}

fn traces(a: TracesArgs) -> CliResult {
    let cfg = TraceSimConfig {
        seed: a.seed,
        clients: a.clients,
        providers: a.providers,
        layers: a.layers,
        nodes_per_layer: a.per_layer,
        rates: Rates { lambda_p: a.lambda_p, lambda_l: a.lambda_l, lambda_d: a.lambda_d, lambda_m: 0.0, mu: a.mu },
        duration: a.duration,
        challenge_time: Some(a.challenge_time),
    };
    let run = run_trace_simulation(&cfg)?;
    let drops = run.traces_of(TraceKind::Drop);
    let (c, d) = run.challenge_traces().expect("challenge configured");
    let holds = anonymity_condition_holds((c, d), &drops, &HashSet::new())?;
    let file = TraceFile {
        traces: loopmix::simulator::export_trace_log(&run),
        challenge: Some((c.clone(), d.clone())),
        drops,
    };
    if let Some(path) = &a.out {
        write_file(path, &serde_json::to_string(&file)?)?;
    }
    print_json(&serde_json::json!({
        "messages": file.traces.len(),
        "drop_traces": file.drops.len(),
        "anonymity_condition": holds,
    }))
}
