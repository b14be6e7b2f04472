use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid rates: {0}")]
pub struct RatesError(pub String);

/// Poisson parameters, all per second (or per simulation time unit).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    /// Client payload stream.
    pub lambda_p: f64,
    /// Client loop cover.
    pub lambda_l: f64,
    /// Client drop cover.
    pub lambda_d: f64,
    /// Mix loop cover.
    pub lambda_m: f64,
    /// Per-hop delay rate; the mean delay is `1 / mu`.
    pub mu: f64,
}

impl Rates {
    pub fn validate(&self) -> Result<(), RatesError> {
        for (name, v) in [
            ("lambda_p", self.lambda_p),
            ("lambda_l", self.lambda_l),
            ("lambda_d", self.lambda_d),
            ("lambda_m", self.lambda_m),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(RatesError(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if !self.mu.is_finite() || self.mu <= 0.0 {
            return Err(RatesError(format!("mu = {} must be finite and > 0", self.mu)));
        }
        Ok(())
    }
}

impl Default for Rates {
    /// The per-minute deployment values, expressed per second.
    fn default() -> Self {
        Self { lambda_p: 3.0 / 60.0, lambda_l: 1.0 / 60.0, lambda_d: 1.0 / 60.0, lambda_m: 1.0 / 60.0, mu: 2.0 }
    }
}

/// Total client send rate `lambda_p + lambda_l + lambda_d`.
pub fn aggregate_output_rate(rates: &Rates) -> f64 {
    rates.lambda_p + rates.lambda_l + rates.lambda_d
}

/// One Exp(`rate`) sample; `+inf` when the rate is zero.
pub fn sample_exp<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    Exp::new(rate).expect("positive finite rate").sample(rng)
}
