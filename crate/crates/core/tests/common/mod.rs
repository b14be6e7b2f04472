//! Independent oracles and fixtures shared by the integration tests and the
//! acceptance run. Nothing here calls the closed forms it is compared with.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use loopmix::analysis::{shannon_entropy_bits, Trace, Transmission};
use loopmix::simulator::{LabelDistribution, PoolEvent};
use loopmix::{generate_network, Client, ClientConfig, NetworkShape, Rates, Secrets, Topology};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Inverse-transform exponential, deliberately not the library sampler.
pub fn exp(rng: &mut impl Rng, rate: f64) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MatchFrequencies {
    /// Next departure is initial message 0.
    pub initial: f64,
    /// Next departure is late message 0.
    pub late: f64,
    /// Next event is one of the mix's own loops.
    pub looped: f64,
}

/// Explicit exponential clocks: `n` messages enter together, departures are
/// observed until `k` remain, `l` late messages arrive, then the next event
/// among the pool and a rate-`lambda_m` loop emitter is recorded.
pub fn monte_carlo_pool_match(
    n: usize,
    k: usize,
    l: usize,
    mu: f64,
    lambda_m: f64,
    trials: usize,
    rng: &mut impl Rng,
) -> MatchFrequencies {
    let (mut hit_initial, mut hit_late, mut hit_loop) = (0usize, 0usize, 0usize);
    let mut release = vec![0.0f64; n + l];
    for _ in 0..trials {
        for r in release.iter_mut().take(n) {
            *r = exp(rng, mu);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| release[*a].total_cmp(&release[*b]));
        let now = if k == n { 0.0 } else { release[order[n - k - 1]] };
        let mut alive: Vec<usize> = order[n - k..].to_vec();
        for j in 0..l {
            release[n + j] = now + exp(rng, mu);
            alive.push(n + j);
        }
        let loop_at = now + exp(rng, lambda_m);
        let first = *alive.iter().min_by(|a, b| release[**a].total_cmp(&release[**b])).unwrap();
        if loop_at < release[first] {
            hit_loop += 1;
        } else if first == 0 {
            hit_initial += 1;
        } else if l > 0 && first == n {
            hit_late += 1;
        }
    }
    let t = trials as f64;
    MatchFrequencies { initial: hit_initial as f64 / t, late: hit_late as f64 / t, looped: hit_loop as f64 / t }
}

/// Random arrival (`true`) / departure (`false`) log that never departs from
/// an empty pool and contains at least one departure.
pub fn random_pool_log(rng: &mut impl Rng, len: usize) -> Vec<bool> {
    loop {
        let mut pool = 0usize;
        let mut log = Vec::with_capacity(len);
        for _ in 0..len {
            let arrive = pool == 0 || rng.random_bool(0.55);
            pool = if arrive { pool + 1 } else { pool - 1 };
            log.push(arrive);
        }
        if log.iter().any(|a| !a) {
            return log;
        }
    }
}

/// Per-input match distribution of every departure, computed from scratch.
///
/// `w[m]` is the probability that input `m` is still pooled. A departure
/// from a pool of `N` is input `m` with probability `w[m] / N`, after which
/// every survival probability shrinks by `1 - 1/N`.
pub fn exact_departure_distributions(log: &[bool]) -> Vec<Vec<f64>> {
    let mut w: Vec<f64> = Vec::new();
    let mut pooled = 0usize;
    let mut out = Vec::new();
    for &arrive in log {
        if arrive {
            w.push(1.0);
            pooled += 1;
        } else {
            let n = pooled as f64;
            out.push(w.iter().map(|x| x / n).collect());
            for x in w.iter_mut() {
                *x *= 1.0 - 1.0 / n;
            }
            pooled -= 1;
        }
    }
    out
}

pub fn exact_departure_entropies(log: &[bool]) -> Vec<f64> {
    exact_departure_distributions(log).iter().map(|p| shannon_entropy_bits(p)).collect()
}

/// Same weighting over label distributions: replays a final-mix event log
/// and returns the label distribution of each departure and of the pool at
/// the end.
pub fn replay_label_log(events: &[PoolEvent]) -> (Vec<LabelDistribution>, LabelDistribution) {
    let mut items: Vec<(f64, LabelDistribution)> = Vec::new();
    let mut pooled = 0usize;
    let mut departures = Vec::new();
    let avg = |items: &[(f64, LabelDistribution)], n: usize| {
        if n == 0 {
            return LabelDistribution::default();
        }
        let (mut s0, mut s1) = (0.0, 0.0);
        for (w, d) in items {
            s0 += w * d.p_s0;
            s1 += w * d.p_s1;
        }
        LabelDistribution { p_s0: s0 / n as f64, p_s1: s1 / n as f64 }
    };
    for ev in events {
        match ev {
            PoolEvent::Arrive(d) => {
                items.push((1.0, *d));
                pooled += 1;
            }
            PoolEvent::Depart(_) => {
                departures.push(avg(&items, pooled));
                let f = 1.0 - 1.0 / pooled as f64;
                for (w, _) in items.iter_mut() {
                    *w *= f;
                }
                pooled -= 1;
            }
        }
    }
    let last = avg(&items, pooled);
    (departures, last)
}

/// Average over many arrivals of `1 / (1 + others in pool)` for a mix fed at
/// `rate` with Exp(`mu`) delays: the chance a uniform guess among pooled
/// messages picks the target.
pub fn monte_carlo_blocking(rate: f64, mu: f64, arrivals: usize, rng: &mut impl Rng) -> f64 {
    let mut releases: Vec<f64> = Vec::new();
    let mut now = 0.0;
    let burn_in = (10.0 * rate / mu) as usize + 100;
    let mut acc = 0.0;
    for i in 0..arrivals + burn_in {
        now += exp(rng, rate);
        releases.retain(|&r| r > now);
        if i >= burn_in {
            acc += 1.0 / (1.0 + releases.len() as f64);
        }
        releases.push(now + exp(rng, mu));
    }
    acc / arrivals as f64
}

/// Linked trace through `nodes` with the given transmission times.
pub fn trace(nodes: &[&str], times: &[f64]) -> Trace {
    assert_eq!(nodes.len(), times.len() + 1);
    Trace(
        times
            .iter()
            .enumerate()
            .map(|(i, &t)| Transmission {
                sender: nodes[i].to_owned(),
                time: t,
                handle: i as u64,
                recipient: nodes[i + 1].to_owned(),
            })
            .collect(),
    )
}

/// client -> provider -> one mix per layer -> destination provider.
pub fn random_trace(rng: &mut impl Rng, layers: usize, per_layer: usize, providers: usize, client: usize) -> Trace {
    let mut nodes = vec![format!("u{client}"), format!("p{}", rng.random_range(0..providers))];
    for layer in 0..layers {
        nodes.push(format!("m{layer}{}", rng.random_range(0..per_layer)));
    }
    nodes.push(format!("p{}", rng.random_range(0..providers)));
    let mut t = rng.random_range(0.0..2.0);
    let times: Vec<f64> = (0..nodes.len() - 1)
        .map(|_| {
            t += 0.05 + exp(rng, 1.0);
            t
        })
        .collect();
    let refs: Vec<&str> = nodes.iter().map(String::as_str).collect();
    trace(&refs, &times)
}

pub fn network(shape: NetworkShape, seed: u64) -> (Topology, Secrets) {
    let mut port = 20_000u32;
    generate_network(
        shape,
        |_| {
            port += 1;
            format!("127.0.0.1:{port}")
        },
        &mut rng(seed),
    )
}

pub fn client(topology: &Topology, secrets: &Secrets, index: usize, rates: Rates, seed: u64) -> Client {
    let c = &topology.clients[index];
    let cfg = ClientConfig {
        id: c.id.clone(),
        secret_key: secrets.get(&c.id).unwrap(),
        provider_id: c.provider_id.clone(),
        token: c.token,
        rates,
        pull_period_s: 10.0,
        debug_type_flags: false,
    };
    Client::new(cfg, &mut rng(seed))
}

/// Half-width of a band of four standard errors around a binomial frequency.
pub fn binomial_band(p: f64, trials: usize) -> f64 {
    4.0 * (p * (1.0 - p) / trials as f64).sqrt()
}
