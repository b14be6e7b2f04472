//! Observation-level simulation: every link transmission is logged as a
//! [`Transmission`] so the anonymity condition can be evaluated on the
//! resulting traces. Each message is timed independently; no packets are
//! built.

use rand::Rng;
use serde::Serialize;

use super::{rng_for, SimError};
use crate::analysis::{Trace, Transmission};
use crate::rates::{sample_exp, Rates};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceSimConfig {
    pub seed: u64,
    pub clients: usize,
    pub providers: usize,
    pub layers: usize,
    pub nodes_per_layer: usize,
    /// Uses `lambda_p`, `lambda_d`, `lambda_l` per client and `mu` per hop.
    pub rates: Rates,
    pub duration: f64,
    /// Clients 0 and 1 each send one extra real message at this time.
    pub challenge_time: Option<f64>,
}

impl Default for TraceSimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            clients: 10,
            providers: 2,
            layers: 3,
            nodes_per_layer: 2,
            rates: Rates { lambda_p: 1.0, lambda_l: 0.0, lambda_d: 5.0, lambda_m: 0.0, mu: 1.0 },
            duration: 20.0,
            challenge_time: Some(10.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TraceKind {
    Real,
    Drop,
    Loop,
    Challenge,
}

#[derive(Debug, Clone, Serialize)]
pub struct TracedMessage {
    pub kind: TraceKind,
    pub trace: Trace,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRun {
    pub messages: Vec<TracedMessage>,
    /// Indices into `messages` of the two challenge messages.
    pub challenge: Option<(usize, usize)>,
    pub clients: Vec<String>,
    pub providers: Vec<String>,
    pub mixes: Vec<Vec<String>>,
}

impl TraceRun {
    pub fn is_client(&self, id: &str) -> bool {
        self.clients.iter().any(|c| c == id)
    }

    pub fn is_provider(&self, id: &str) -> bool {
        self.providers.iter().any(|p| p == id)
    }

    pub fn traces_of(&self, kind: TraceKind) -> Vec<Trace> {
        self.messages.iter().filter(|m| m.kind == kind).map(|m| m.trace.clone()).collect()
    }

    pub fn challenge_traces(&self) -> Option<(&Trace, &Trace)> {
        self.challenge.map(|(a, b)| (&self.messages[a].trace, &self.messages[b].trace))
    }
}

fn provider_of(client: usize, providers: usize) -> usize {
    client % providers
}

pub fn run_trace_simulation(cfg: &TraceSimConfig) -> Result<TraceRun, SimError> {
    if cfg.clients < 2 || cfg.providers == 0 || cfg.layers == 0 || cfg.nodes_per_layer == 0 {
        return Err(SimError::InvalidConfig("need >= 2 clients and a nonempty network".into()));
    }
    if !(cfg.rates.mu > 0.0 && cfg.duration > 0.0) {
        return Err(SimError::InvalidConfig("mu and duration must be > 0".into()));
    }
    let clients: Vec<String> = (0..cfg.clients).map(|i| format!("client-{i}")).collect();
    let providers: Vec<String> = (0..cfg.providers).map(|i| format!("provider-{i}")).collect();
    let mixes: Vec<Vec<String>> = (0..cfg.layers)
        .map(|l| (0..cfg.nodes_per_layer).map(|k| format!("mix-{l}-{k}")).collect())
        .collect();

    let mut rng = rng_for(cfg.seed, 5);
    let mut handle = 0u64;
    let mut route = |rng: &mut rand_chacha::ChaCha8Rng, sender: usize, dest: &str, t0: f64| {
        let mut nodes = vec![clients[sender].as_str(), providers[provider_of(sender, cfg.providers)].as_str()];
        for layer in &mixes {
            nodes.push(&layer[rng.random_range(0..layer.len())]);
        }
        nodes.push(dest);
        let mut t = t0;
        let mut hops = Vec::with_capacity(nodes.len() - 1);
        for (i, w) in nodes.windows(2).enumerate() {
            if i > 0 {
                t += sample_exp(rng, cfg.rates.mu);
            }
            hops.push(Transmission { sender: w[0].to_owned(), time: t, handle, recipient: w[1].to_owned() });
            handle += 1;
        }
        Trace(hops)
    };

    let mut messages = Vec::new();
    let streams = [
        (TraceKind::Real, cfg.rates.lambda_p),
        (TraceKind::Drop, cfg.rates.lambda_d),
        (TraceKind::Loop, cfg.rates.lambda_l),
    ];
    for c in 0..cfg.clients {
        for &(kind, rate) in &streams {
            let mut t = sample_exp(&mut rng, rate);
            while t < cfg.duration {
                let dest = match kind {
                    TraceKind::Real | TraceKind::Challenge => {
                        let r = rng.random_range(0..cfg.clients);
                        providers[provider_of(r, cfg.providers)].clone()
                    }
                    TraceKind::Drop => providers[rng.random_range(0..cfg.providers)].clone(),
                    TraceKind::Loop => providers[provider_of(c, cfg.providers)].clone(),
                };
                messages.push(TracedMessage { kind, trace: route(&mut rng, c, &dest, t) });
                t += sample_exp(&mut rng, rate);
            }
        }
    }

    let challenge = match cfg.challenge_time {
        Some(t) => {
            let mut idx = [0usize; 2];
            for (slot, sender) in [0usize, 1].into_iter().enumerate() {
                let r = rng.random_range(0..cfg.clients);
                let dest = providers[provider_of(r, cfg.providers)].clone();
                idx[slot] = messages.len();
                messages.push(TracedMessage { kind: TraceKind::Challenge, trace: route(&mut rng, sender, &dest, t) });
            }
            Some((idx[0], idx[1]))
        }
        None => None,
    };
    Ok(TraceRun { messages, challenge, clients, providers, mixes })
}

/// One trace per simulated message, in generation order.
pub fn export_trace_log(run: &TraceRun) -> Vec<Trace> {
    run.messages.iter().map(|m| m.trace.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traces_are_valid() {
        let run = run_trace_simulation(&TraceSimConfig { rates: Rates { lambda_l: 1.0, ..TraceSimConfig::default().rates }, ..Default::default() }).unwrap();
        assert!(run.messages.len() > 100);
        for m in &run.messages {
            m.trace.validate_roles(|c| run.is_client(c), |p| run.is_provider(p)).unwrap();
            assert_eq!(m.trace.len(), 3 + 2);
        }
        for d in run.traces_of(TraceKind::Drop) {
            assert!(run.is_provider(d.destination()));
        }
        let (a, b) = run.challenge_traces().unwrap();
        assert_eq!(a.hop(1).sender, "client-0");
        assert_eq!(b.hop(1).sender, "client-1");
        assert_eq!(export_trace_log(&run).len(), run.messages.len());
    }

    #[test]
    fn handles_are_unique() {
        let run = run_trace_simulation(&TraceSimConfig::default()).unwrap();
        let mut hs: Vec<u64> = run.messages.iter().flat_map(|m| m.trace.0.iter().map(|t| t.handle)).collect();
        let n = hs.len();
        hs.sort_unstable();
        hs.dedup();
        assert_eq!(hs.len(), n);
    }
}
