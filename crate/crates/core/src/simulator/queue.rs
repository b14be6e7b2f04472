use serde::Serialize;

use super::{rng_for, SimError};
use crate::mixnode::MixPool;
use crate::rates::sample_exp;

/// Departures and pool samples before this time are discarded.
pub const POOL_BURN_IN_S: f64 = 10.0;

#[derive(Debug, Clone, Serialize)]
pub struct PoolRun {
    /// Time-averaged pool size after burn-in.
    pub time_avg: f64,
    /// Pool size sampled once per time unit after burn-in.
    pub samples: Vec<u64>,
    /// Gaps between consecutive departures after burn-in.
    pub departure_gaps: Vec<f64>,
}

/// One mix with Poisson(`lambda`) arrivals and Exp(`mu`) delays, observed
/// for `duration` time units.
pub fn run_pool_experiment(lambda: f64, mu: f64, duration: f64, seed: u64) -> Result<PoolRun, SimError> {
    if !(lambda > 0.0 && mu > 0.0 && duration > POOL_BURN_IN_S) {
        return Err(SimError::InvalidConfig(format!("need lambda, mu > 0 and duration > {POOL_BURN_IN_S}")));
    }
    let mut rng = rng_for(seed, 4);
    let mut pool: MixPool<()> = MixPool::new();
    let mut next_arrival = sample_exp(&mut rng, lambda);
    let mut next_sample = POOL_BURN_IN_S;
    let (mut last_t, mut area) = (POOL_BURN_IN_S, 0.0);
    let mut last_departure: Option<f64> = None;
    let mut samples = Vec::new();
    let mut departure_gaps = Vec::new();

    loop {
        let next_departure = pool.peek_release().unwrap_or(f64::INFINITY);
        let now = next_arrival.min(next_departure).min(duration);
        while next_sample <= now && next_sample < duration {
            samples.push(pool.len() as u64);
            next_sample += 1.0;
        }
        if now > POOL_BURN_IN_S {
            area += pool.len() as f64 * (now - last_t.max(POOL_BURN_IN_S));
            last_t = now;
        }
        if now >= duration {
            break;
        }
        if next_arrival <= next_departure {
            pool.insert(now + sample_exp(&mut rng, mu), (), now);
            next_arrival = now + sample_exp(&mut rng, lambda);
        } else {
            pool.next_release(now);
            if now >= POOL_BURN_IN_S {
                if let Some(prev) = last_departure {
                    departure_gaps.push(now - prev);
                }
                last_departure = Some(now);
            }
        }
    }
    Ok(PoolRun { time_avg: area / (duration - POOL_BURN_IN_S), samples, departure_gaps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_pool_size() {
        let run = run_pool_experiment(50.0, 10.0, 500.0, 1).unwrap();
        assert!((run.time_avg - 5.0).abs() < 0.3, "{}", run.time_avg);
        assert_eq!(run.samples.len(), 490);
        let gap_mean = run.departure_gaps.iter().sum::<f64>() / run.departure_gaps.len() as f64;
        assert!((gap_mean - 0.02).abs() < 0.001);
    }
}
