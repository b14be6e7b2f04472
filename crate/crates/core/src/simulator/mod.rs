//! Deterministic discrete-event simulations. Every run is a pure function of
//! its configuration and seed.

mod entropy;
mod epsilon;
mod latency;
mod queue;
mod traces;

pub use entropy::{run_entropy_experiment, EntropyRun};
pub use epsilon::{
    run_epsilon_experiment, run_epsilon_logged, run_epsilon_reps, EpsilonRun, EpsilonSummary, LabelDistribution,
    PoolEvent, SimConfig,
};
pub use latency::run_latency_experiment;
pub use queue::{run_pool_experiment, PoolRun};
pub use traces::{export_trace_log, run_trace_simulation, TraceKind, TraceRun, TraceSimConfig, TracedMessage};

use ordered_float::OrderedFloat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("challenge senders are not part of the simulated population")]
    ChallengeSendersOffline,
    #[error("no challenge traffic reached the final mix; epsilon is unbounded")]
    ZeroProbability,
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Time-ordered event queue with FIFO tie-breaking.
pub(crate) struct EventQueue<E> {
    heap: BinaryHeap<Reverse<(OrderedFloat<f64>, u64, E)>>,
    seq: u64,
}

impl<E: Ord> EventQueue<E> {
    pub(crate) fn new() -> Self {
        Self { heap: BinaryHeap::new(), seq: 0 }
    }

    pub(crate) fn push(&mut self, time: f64, event: E) {
        self.heap.push(Reverse((OrderedFloat(time), self.seq, event)));
        self.seq += 1;
    }

    pub(crate) fn pop(&mut self) -> Option<(f64, E)> {
        self.heap.pop().map(|Reverse((t, _, e))| (t.0, e))
    }
}
