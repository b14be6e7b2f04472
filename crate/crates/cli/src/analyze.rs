use clap::{Args, Subcommand};
use std::collections::HashSet;
use std::path::PathBuf;

use loopmix::analysis::{
    anonymity_condition_holds, blocking_attack_prob, delay_attack_prob, entropy_step, epsilon_of, link_rate,
    pool_match_prob, pool_match_prob_with_loops, steady_pool_size, trace_join, LinkParams, PoolObservation,
};
use loopmix::Rates;

use crate::sim::TraceFile;
use crate::{print_json, CliResult};

#[derive(Subcommand)]
pub enum AnalyzeCommand {
    /// Match probabilities for a pool observed as (n, k, l).
    Pool(PoolArgs),
    /// Same, with the mix's own loops racing the departures.
    PoolLoops(PoolLoopsArgs),
    /// One step of the incremental entropy recursion.
    EntropyStep(EntropyStepArgs),
    /// |ln p0 - ln p1|.
    Epsilon(EpsilonArgs),
    /// Success chance of an (n-1) blocking attack.
    Blocking(BlockingArgs),
    /// Chance no other message arrives late enough to be confused with the target.
    DelayAttack(DelayAttackArgs),
    /// Poisson rate on one link.
    LinkRate(LinkRateArgs),
    /// Mean pool size lambda / mu.
    SteadyPool(SteadyPoolArgs),
    /// Whether two traces from a trace file join at a hop.
    TraceJoin(TraceJoinArgs),
    /// Trace-exchange condition on a trace file.
    AnonCondition(AnonConditionArgs),
}

#[derive(Args)]
pub struct PoolArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    k: u64,
    #[arg(long)]
    l: u64,
}

#[derive(Args)]
pub struct PoolLoopsArgs {
    #[command(flatten)]
    obs: PoolArgs,
    #[arg(long)]
    mu: f64,
    #[arg(long)]
    lambda_m: f64,
}

#[derive(Args)]
pub struct EntropyStepArgs {
    #[arg(long, default_value_t = 0.0)]
    h_prev: f64,
    #[arg(long)]
    k: u64,
    #[arg(long)]
    l: u64,
}

#[derive(Args)]
pub struct EpsilonArgs {
    #[arg(long)]
    p0: f64,
    #[arg(long)]
    p1: f64,
}

#[derive(Args)]
pub struct BlockingArgs {
    #[arg(long)]
    s: f64,
    #[arg(long)]
    mu: f64,
    #[arg(long)]
    lambda_m: f64,
    #[arg(long)]
    lambda_r: f64,
}

#[derive(Args)]
pub struct DelayAttackArgs {
    #[arg(long)]
    k: f64,
    /// Per-link rate.
    #[arg(long)]
    lambda: f64,
    /// Delay rate.
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    t: f64,
}

#[derive(Args)]
pub struct LinkRateArgs {
    #[arg(long)]
    users: f64,
    #[arg(long)]
    mixes: f64,
    #[arg(long)]
    providers: f64,
    #[arg(long)]
    k: f64,
    #[arg(long)]
    ell: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda_p: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda_l: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda_d: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda_m: f64,
}

#[derive(Args)]
pub struct SteadyPoolArgs {
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    mu: f64,
}

#[derive(Args)]
pub struct TraceJoinArgs {
    /// Trace file written by `sim traces`.
    #[arg(long)]
    file: PathBuf,
    /// Index of the first trace.
    #[arg(long)]
    x: usize,
    #[arg(long)]
    y: usize,
    /// 1-based hop index.
    #[arg(long)]
    hop: usize,
}

#[derive(Args)]
pub struct AnonConditionArgs {
    #[arg(long)]
    file: PathBuf,
    /// Comma-separated ids of compromised nodes.
    #[arg(long, value_delimiter = ',')]
    compromised: Vec<String>,
}

fn read_traces(path: &PathBuf) -> Result<TraceFile, Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("bad trace file: {e}"))?)
}

pub fn run(cmd: AnalyzeCommand) -> CliResult {
    match cmd {
        AnalyzeCommand::Pool(a) => print_json(&pool_match_prob(PoolObservation::new(a.n, a.k, a.l)?)?),
        AnalyzeCommand::PoolLoops(a) => {
            let obs = PoolObservation::new(a.obs.n, a.obs.k, a.obs.l)?;
            print_json(&pool_match_prob_with_loops(obs, a.mu, a.lambda_m)?)
        }
        AnalyzeCommand::EntropyStep(a) => {
            print_json(&serde_json::json!({ "entropy_bits": entropy_step(a.h_prev, a.k, a.l)? }))
        }
        AnalyzeCommand::Epsilon(a) => print_json(&serde_json::json!({ "epsilon": epsilon_of(a.p0, a.p1)? })),
        AnalyzeCommand::Blocking(a) => print_json(&serde_json::json!({
            "probability": blocking_attack_prob(a.s, a.mu, a.lambda_m, a.lambda_r)?
        })),
        AnalyzeCommand::DelayAttack(a) => print_json(&serde_json::json!({
            "probability": delay_attack_prob(a.k, a.lambda, a.delta, a.t)?
        })),
        AnalyzeCommand::LinkRate(a) => {
            let params = LinkParams {
                users: a.users,
                mixes: a.mixes,
                providers: a.providers,
                k_links: a.k,
                ell: a.ell,
                rates: Rates { lambda_p: a.lambda_p, lambda_l: a.lambda_l, lambda_d: a.lambda_d, lambda_m: a.lambda_m, mu: 1.0 },
            };
            print_json(&serde_json::json!({ "link_rate": link_rate(&params)? }))
        }
        AnalyzeCommand::SteadyPool(a) => {
            print_json(&serde_json::json!({ "mean_pool_size": steady_pool_size(a.lambda, a.mu)? }))
        }
        AnalyzeCommand::TraceJoin(a) => {
            let file = read_traces(&a.file)?;
            let get = |i: usize| file.traces.get(i).ok_or_else(|| format!("trace index {i} out of range"));
            print_json(&serde_json::json!({ "joins": trace_join(get(a.x)?, get(a.y)?, a.hop)? }))
        }
        AnalyzeCommand::AnonCondition(a) => {
            let file = read_traces(&a.file)?;
            let (c, d) = file.challenge.as_ref().ok_or("trace file has no challenge pair")?;
            let compromised: HashSet<String> = a.compromised.into_iter().collect();
            print_json(&serde_json::json!({
                "holds": anonymity_condition_holds((c, d), &file.drops, &compromised)?
            }))
        }
    }
}
