use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::rates::{aggregate_output_rate, Rates};

/// Chance of singling out a target when an attacker blocks all but a `1/s`
/// share of the `lambda_r` real traffic into a mix with loop rate `lambda_m`.
///
/// This is `1 / E[pool size]` under blocking. Values above 1 are clamped.
pub fn blocking_attack_prob(s: f64, mu: f64, lambda_m: f64, lambda_r: f64) -> Result<f64, AnalysisError> {
    if !(s > 1.0) || !(mu > 0.0) || !(lambda_m >= 0.0) || !(lambda_r >= 0.0) {
        return Err(AnalysisError::InvalidArgument("need s > 1, mu > 0, rates >= 0".into()));
    }
    let denom = s * lambda_m + lambda_r;
    if denom <= 0.0 {
        return Err(AnalysisError::InvalidArgument("s * lambda_m + lambda_r must be > 0".into()));
    }
    let p = s * mu / denom;
    if p > 1.0 {
        log::warn!("blocking probability {p:.4} exceeds 1 (pool expected to hold < 1 message); clamping");
        return Ok(1.0);
    }
    Ok(p)
}

/// Chance that no message on `k_links` links of rate `lambda` arrives
/// late enough to be confused with the target, when the attacker knows the
/// target arrived before `t` and delays are Exp(`delta`).
pub fn delay_attack_prob(k_links: f64, lambda: f64, delta: f64, t: f64) -> Result<f64, AnalysisError> {
    if !(k_links > 0.0) || !(lambda > 0.0) || !(delta > 0.0) || !(t >= 0.0) {
        return Err(AnalysisError::InvalidArgument("need k, lambda, delta > 0 and t >= 0".into()));
    }
    Ok((-k_links * lambda * (-delta * t).exp() / delta).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub users: f64,
    pub mixes: f64,
    pub providers: f64,
    pub k_links: f64,
    pub ell: f64,
    pub rates: Rates,
}

/// Poisson rate on one link: client traffic spread over `k (N + P)` links
/// plus mix loop traffic.
pub fn link_rate(p: &LinkParams) -> Result<f64, AnalysisError> {
    if !(p.k_links > 0.0) || !(p.mixes + p.providers > 0.0) {
        return Err(AnalysisError::InvalidArgument("need k > 0 and N + P > 0".into()));
    }
    let user = p.users * p.ell * aggregate_output_rate(&p.rates) / (p.k_links * (p.mixes + p.providers));
    Ok(user + p.ell * p.rates.lambda_m / p.k_links)
}
