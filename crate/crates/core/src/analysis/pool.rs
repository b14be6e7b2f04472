use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("zero probability: the likelihood ratio is unbounded")]
    ZeroProbability,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// `n` messages mixed together, `k` of them still in the pool after the
/// observed departures, then `l` late arrivals before the next departure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolObservation {
    pub n_initial: u64,
    pub k_remaining: u64,
    pub l_late: u64,
}

impl PoolObservation {
    pub fn new(n_initial: u64, k_remaining: u64, l_late: u64) -> Result<Self, AnalysisError> {
        let obs = Self { n_initial, k_remaining, l_late };
        obs.validate()?;
        Ok(obs)
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.k_remaining < 1 || self.k_remaining > self.n_initial {
            return Err(AnalysisError::InvalidObservation(format!(
                "need 1 <= k <= n, got n={}, k={}",
                self.n_initial, self.k_remaining
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoolMatch {
    /// Probability the next departure is one particular initial message.
    pub p_initial: f64,
    /// Same for one particular late arrival; `None` when there are none.
    pub p_late: Option<f64>,
}

pub fn pool_match_prob(obs: PoolObservation) -> Result<PoolMatch, AnalysisError> {
    obs.validate()?;
    let (n, k, l) = (obs.n_initial as f64, obs.k_remaining as f64, obs.l_late as f64);
    Ok(PoolMatch {
        p_initial: k / (n * (l + k)),
        p_late: (obs.l_late > 0).then(|| 1.0 / (l + k)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LoopMatch {
    pub p_noloop: f64,
    pub p_initial: f64,
    pub p_late: Option<f64>,
    pub p_loop: f64,
}

/// Like [`pool_match_prob`] when the mix also emits its own loops at rate
/// `lambda_m`, which race the `k + l` pending departures.
pub fn pool_match_prob_with_loops(
    obs: PoolObservation,
    mu: f64,
    lambda_m: f64,
) -> Result<LoopMatch, AnalysisError> {
    obs.validate()?;
    if !(mu > 0.0) || !(lambda_m >= 0.0) {
        return Err(AnalysisError::InvalidArgument("need mu > 0 and lambda_m >= 0".into()));
    }
    let (n, k, l) = (obs.n_initial as f64, obs.k_remaining as f64, obs.l_late as f64);
    let total = (k + l) * mu + lambda_m;
    Ok(LoopMatch {
        p_noloop: (k + l) * mu / total,
        p_initial: (k / n) * mu / total,
        p_late: (obs.l_late > 0).then(|| mu / total),
        p_loop: lambda_m / total,
    })
}

/// Shannon entropy in bits; zero entries contribute nothing.
pub fn shannon_entropy_bits(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum()
}

/// Entropy of the next departure given `k` arrivals since the previous
/// departure and `l` older messages whose common distribution has entropy
/// `h_prev` bits.
pub fn entropy_step(h_prev: f64, k: u64, l: u64) -> Result<f64, AnalysisError> {
    if k + l == 0 {
        return Err(AnalysisError::InvalidArgument("k + l must be >= 1".into()));
    }
    if !(h_prev >= 0.0) {
        return Err(AnalysisError::InvalidArgument("h_prev must be >= 0".into()));
    }
    let total = (k + l) as f64;
    let (pk, pl) = (k as f64 / total, l as f64 / total);
    let fresh = if k > 0 { pk * (k as f64).log2() } else { 0.0 };
    Ok(shannon_entropy_bits(&[pk, pl]) + fresh + pl * h_prev)
}

/// `|ln p0 - ln p1|`.
pub fn epsilon_of(p0: f64, p1: f64) -> Result<f64, AnalysisError> {
    if p0 <= 0.0 || p1 <= 0.0 {
        return Err(AnalysisError::ZeroProbability);
    }
    Ok((p0.ln() - p1.ln()).abs())
}

/// Mean M/M/inf occupancy `lambda_in / mu`.
pub fn steady_pool_size(lambda_in: f64, mu: f64) -> Result<f64, AnalysisError> {
    if !(mu > 0.0) || !(lambda_in >= 0.0) {
        return Err(AnalysisError::InvalidArgument("need mu > 0 and lambda >= 0".into()));
    }
    Ok(lambda_in / mu)
}
