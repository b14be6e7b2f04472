//! Closed-form anonymity and traffic calculators.

mod attacks;
mod pool;
mod traces;

pub use attacks::{blocking_attack_prob, delay_attack_prob, link_rate, LinkParams};
pub use pool::{
    entropy_step, epsilon_of, pool_match_prob, pool_match_prob_with_loops, shannon_entropy_bits,
    steady_pool_size, AnalysisError, LoopMatch, PoolMatch, PoolObservation,
};
pub use traces::{anonymity_condition_holds, trace_join, Trace, TraceError, Transmission};
