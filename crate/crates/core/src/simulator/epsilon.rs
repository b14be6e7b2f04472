//! End-to-end label propagation through a layered mix network.
//!
//! Senders inject messages straight into a uniformly chosen first-layer mix.
//! Messages from the two challenge senders that carry buffered payload are
//! labelled S0/S1; everything else, including their cover, is unlabelled.
//! An honest mix emits each departure with the average label distribution
//! of its pool; a corrupt mix lets every message keep its own distribution.
//! Loops never mix with labelled traffic and are not simulated here.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{rng_for, EventQueue, SimError};
use crate::analysis::epsilon_of;
use crate::mixnode::MixPool;
use crate::rates::{sample_exp, Rates};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub users: usize,
    /// `lambda_p` is each sender's message rate, `mu` the per-hop delay rate.
    pub rates: Rates,
    pub layers: usize,
    pub nodes_per_layer: usize,
    pub corrupt_fraction: f64,
    pub burn_in: f64,
    pub run_time: f64,
    /// Indices of the two challenge senders.
    pub challenge: (usize, usize),
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            users: 100,
            rates: Rates { lambda_p: 2.0, lambda_l: 0.0, lambda_d: 0.0, lambda_m: 0.0, mu: 1.0 },
            layers: 3,
            nodes_per_layer: 3,
            corrupt_fraction: 0.0,
            burn_in: 2500.0,
            run_time: 100.0,
            challenge: (0, 1),
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_owned()));
        if self.layers == 0 || self.nodes_per_layer == 0 {
            return bad("need at least one layer with one mix");
        }
        if !(self.burn_in > 0.0 && self.run_time > 0.0) {
            return bad("burn_in and run_time must be > 0");
        }
        if !(0.0..1.0).contains(&self.corrupt_fraction) {
            return bad("corrupt_fraction must be in [0, 1)");
        }
        if !(self.rates.lambda_p > 0.0 && self.rates.mu > 0.0) {
            return bad("lambda and mu must be > 0");
        }
        let (a, b) = self.challenge;
        if a == b || a >= self.users || b >= self.users {
            return Err(SimError::ChallengeSendersOffline);
        }
        Ok(())
    }
}

/// Probability mass of a message over sender labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LabelDistribution {
    pub p_s0: f64,
    pub p_s1: f64,
}

impl LabelDistribution {
    pub const S0: Self = Self { p_s0: 1.0, p_s1: 0.0 };
    pub const S1: Self = Self { p_s0: 0.0, p_s1: 1.0 };

    pub fn p_unlabeled(&self) -> f64 {
        1.0 - self.p_s0 - self.p_s1
    }

    fn add(&mut self, o: Self) {
        self.p_s0 += o.p_s0;
        self.p_s1 += o.p_s1;
    }

    fn sub(&mut self, o: Self) {
        self.p_s0 -= o.p_s0;
        self.p_s1 -= o.p_s1;
    }

    fn scaled(self, f: f64) -> Self {
        Self { p_s0: self.p_s0 * f, p_s1: self.p_s1 * f }
    }
}

struct SimMix {
    pool: MixPool<LabelDistribution>,
    corrupt: bool,
    /// Sum of the label distributions currently in the pool.
    mass: LabelDistribution,
}

impl SimMix {
    fn arrive(&mut self, now: f64, delay: f64, label: LabelDistribution) {
        self.mass.add(label);
        self.pool.insert(now + delay, label, now);
    }

    fn average(&self) -> LabelDistribution {
        if self.pool.is_empty() {
            return LabelDistribution::default();
        }
        self.mass.scaled(1.0 / self.pool.len() as f64)
    }

    fn depart(&mut self, now: f64) -> LabelDistribution {
        let out = if self.corrupt { None } else { Some(self.average()) };
        let (_, own) = self.pool.next_release(now).expect("wake event implies a pending message");
        let out = out.unwrap_or(own);
        self.mass.sub(out);
        if self.pool.is_empty() {
            self.mass = LabelDistribution::default();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Send(usize),
    Wake(usize),
}

/// What happened at the final mix, in order. Departures carry the label
/// distribution the message left with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PoolEvent {
    Arrive(LabelDistribution),
    Depart(LabelDistribution),
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsilonRun {
    pub epsilon: f64,
    pub final_mix: usize,
    pub final_distribution: LabelDistribution,
    pub labelled_sent: (u64, u64),
    /// Label mass delivered out of the last layer.
    pub delivered_mass: LabelDistribution,
    /// Label mass still pooled at the end of the run.
    pub pooled_mass: LabelDistribution,
    pub messages: u64,
}

pub fn run_epsilon_experiment(cfg: &SimConfig) -> Result<EpsilonRun, SimError> {
    run(cfg, false).map(|(r, _)| r)
}

/// [`run_epsilon_experiment`] plus the event log of the final mix.
pub fn run_epsilon_logged(cfg: &SimConfig) -> Result<(EpsilonRun, Vec<PoolEvent>), SimError> {
    run(cfg, true)
}

fn run(cfg: &SimConfig, logged: bool) -> Result<(EpsilonRun, Vec<PoolEvent>), SimError> {
    cfg.validate()?;
    let mut log = Vec::new();
    let mut rng = rng_for(cfg.seed, 2);
    let n_mixes = cfg.layers * cfg.nodes_per_layer;
    let n_corrupt = (cfg.corrupt_fraction * n_mixes as f64).round() as usize;
    let corrupt: Vec<usize> = sample(&mut rng, n_mixes, n_corrupt).into_vec();
    let mut mixes: Vec<SimMix> = (0..n_mixes)
        .map(|i| SimMix { pool: MixPool::new(), corrupt: corrupt.contains(&i), mass: Default::default() })
        .collect();
    let final_mix = (cfg.layers - 1) * cfg.nodes_per_layer + rng.random_range(0..cfg.nodes_per_layer);

    let end = cfg.burn_in + cfg.run_time;
    let lambda = cfg.rates.lambda_p;
    let mu = cfg.rates.mu;
    let (c0, c1) = cfg.challenge;
    let mut events = EventQueue::new();
    for u in 0..cfg.users {
        let start = if u == c0 || u == c1 { cfg.burn_in } else { 0.0 };
        events.push(start + sample_exp(&mut rng, lambda), Event::Send(u));
    }

    let mut popped = [0u64; 2];
    let mut delivered = LabelDistribution::default();
    let mut messages = 0u64;
    while let Some((now, ev)) = events.pop() {
        if now > end {
            break;
        }
        match ev {
            Event::Send(u) => {
                let mut label = LabelDistribution::default();
                let slot = if u == c0 { Some(0) } else if u == c1 { Some(1) } else { None };
                if let Some(s) = slot {
                    // One message joins the buffer at burn_in, burn_in + 1, ...
                    let added = (now - cfg.burn_in).floor() as u64 + 1;
                    if added > popped[s] {
                        popped[s] += 1;
                        label = if s == 0 { LabelDistribution::S0 } else { LabelDistribution::S1 };
                    }
                }
                messages += 1;
                let m = rng.random_range(0..cfg.nodes_per_layer);
                let delay = sample_exp(&mut rng, mu);
                if logged && m == final_mix {
                    log.push(PoolEvent::Arrive(label));
                }
                mixes[m].arrive(now, delay, label);
                events.push(now + delay, Event::Wake(m));
                events.push(now + sample_exp(&mut rng, lambda), Event::Send(u));
            }
            Event::Wake(m) => {
                let label = mixes[m].depart(now);
                if logged && m == final_mix {
                    log.push(PoolEvent::Depart(label));
                }
                let layer = m / cfg.nodes_per_layer;
                if layer + 1 == cfg.layers {
                    delivered.add(label);
                } else {
                    let next = (layer + 1) * cfg.nodes_per_layer + rng.random_range(0..cfg.nodes_per_layer);
                    let delay = sample_exp(&mut rng, mu);
                    if logged && next == final_mix {
                        log.push(PoolEvent::Arrive(label));
                    }
                    mixes[next].arrive(now, delay, label);
                    events.push(now + delay, Event::Wake(next));
                }
            }
        }
    }

    let mut pooled = LabelDistribution::default();
    for m in &mixes {
        pooled.add(m.mass);
    }
    let dist = mixes[final_mix].average();
    let epsilon = epsilon_of(dist.p_s0, dist.p_s1).map_err(|_| SimError::ZeroProbability)?;
    let run = EpsilonRun {
        epsilon,
        final_mix,
        final_distribution: dist,
        labelled_sent: (popped[0], popped[1]),
        delivered_mass: delivered,
        pooled_mass: pooled,
        messages,
    };
    Ok((run, log))
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsilonSummary {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

/// `reps` independent repetitions with seeds `cfg.seed, cfg.seed + 1, ...`.
pub fn run_epsilon_reps(cfg: &SimConfig, reps: usize) -> Result<EpsilonSummary, SimError> {
    let mut values = Vec::with_capacity(reps);
    for r in 0..reps {
        let run = run_epsilon_experiment(&SimConfig { seed: cfg.seed.wrapping_add(r as u64), ..*cfg })?;
        values.push(run.epsilon);
    }
    Ok(EpsilonSummary { mean: stats::mean(&values), std: stats::std_dev(&values), values })
}
