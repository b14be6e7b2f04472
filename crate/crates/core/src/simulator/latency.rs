use super::{rng_for, SimError};
use crate::rates::sample_exp;

/// End-to-end latency of `n` messages crossing `hops` Poisson-delay hops,
/// each adding an Exp(`mu`) delay plus a fixed `processing_s`.
pub fn run_latency_experiment(mu: f64, hops: usize, n: usize, processing_s: f64, seed: u64) -> Result<Vec<f64>, SimError> {
    if hops == 0 || !(mu > 0.0) || processing_s < 0.0 {
        return Err(SimError::InvalidConfig("need hops >= 1, mu > 0, processing >= 0".into()));
    }
    let mut rng = rng_for(seed, 3);
    Ok((0..n)
        .map(|_| (0..hops).map(|_| sample_exp(&mut rng, mu) + processing_s).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn gamma_moments() {
        let xs = run_latency_experiment(2.0, 4, 20_000, 0.0, 1).unwrap();
        assert!((stats::mean(&xs) - 2.0).abs() < 0.03);
        assert!((stats::std_dev(&xs) - 1.0).abs() < 0.03);
    }

    #[test]
    fn single_hop_is_exponential() {
        let xs = run_latency_experiment(2.0, 1, 5000, 0.0, 2).unwrap();
        assert!(!stats::ks_one_sample(&xs, |x| 1.0 - (-2.0 * x).exp()).rejected_at(0.01));
    }

    #[test]
    fn processing_shifts_latency() {
        let a = run_latency_experiment(2.0, 3, 100, 0.0, 5).unwrap();
        let b = run_latency_experiment(2.0, 3, 100, 0.01, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y - x - 0.03).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_zero_hops() {
        assert!(run_latency_experiment(2.0, 0, 10, 0.0, 0).is_err());
    }
}
