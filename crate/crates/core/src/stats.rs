//! Goodness-of-fit tests used by the simulator reports and the test suites.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Gamma, Poisson};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl TestResult {
    pub fn rejected_at(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Asymptotic Kolmogorov survival function `Q(x) = 2 Σ (-1)^{j-1} e^{-2 j² x²}`.
fn kolmogorov_q(x: f64) -> f64 {
    if x < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let j = j as f64;
        let term = (-2.0 * j * j * x * x).exp();
        sum += if j as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_q((s + 0.12 + 0.11 / s) * d)
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> TestResult {
    assert!(!samples.is_empty(), "KS test needs samples");
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    TestResult { statistic: d, p_value: ks_p_value(d, n) }
}

/// Two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TestResult {
    assert!(!a.is_empty() && !b.is_empty(), "KS test needs samples");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    TestResult { statistic: d, p_value: ks_p_value(d, n * m / (n + m)) }
}

/// Pearson chi-squared test of observed counts against expected counts.
/// `fitted_params` is subtracted from the degrees of freedom.
pub fn chi_square(observed: &[f64], expected: &[f64], fitted_params: usize) -> TestResult {
    assert_eq!(observed.len(), expected.len());
    let stat: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = (observed.len() - 1 - fitted_params).max(1) as f64;
    let p = 1.0 - ChiSquared::new(df).expect("df > 0").cdf(stat);
    TestResult { statistic: stat, p_value: p }
}

/// Chi-squared goodness of fit of integer samples to Poisson(`mean`), with
/// bins merged from both tails until every expected count is at least 5.
pub fn chi_square_poisson(samples: &[u64], mean: f64) -> TestResult {
    let n = samples.len() as f64;
    let pois = Poisson::new(mean).expect("positive mean");
    let max = samples.iter().copied().max().unwrap_or(0).max((mean * 3.0) as u64 + 10);
    let mut observed = vec![0.0; max as usize + 1];
    for &s in samples {
        observed[s as usize] += 1.0;
    }
    let mut expected: Vec<f64> = (0..=max).map(|k| n * pois.pmf(k)).collect();
    // Fold the upper tail mass into the last bin.
    let covered: f64 = expected.iter().sum();
    *expected.last_mut().unwrap() += n - covered;

    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (o, e) in observed.iter().zip(&expected) {
        acc.0 += o;
        acc.1 += e;
        if acc.1 >= 5.0 {
            bins.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if let Some(last) = bins.last_mut() {
        last.0 += acc.0;
        last.1 += acc.1;
    }
    let (o, e): (Vec<f64>, Vec<f64>) = bins.into_iter().unzip();
    chi_square(&o, &e, 0)
}

/// CDF of Exp(`rate`).
pub fn exp_cdf(rate: f64) -> impl Fn(f64) -> f64 {
    move |x| if x <= 0.0 { 0.0 } else { 1.0 - (-rate * x).exp() }
}

/// CDF of Gamma(`shape`, `rate`).
pub fn gamma_cdf(shape: f64, rate: f64) -> impl Fn(f64) -> f64 {
    let g = Gamma::new(shape, rate).expect("shape and rate must be > 0");
    move |x| g.cdf(x)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp};

    #[test]
    fn kolmogorov_reference_values() {
        // Standard critical values: Q(1.3581) = 0.05, Q(1.6276) = 0.01.
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_q(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn ks_detects_wrong_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let exp = Exp::new(2.0).unwrap();
        let xs: Vec<f64> = (0..5000).map(|_| exp.sample(&mut rng)).collect();
        assert!(!ks_one_sample(&xs, |x| 1.0 - (-2.0 * x).exp()).rejected_at(0.01));
        assert!(ks_one_sample(&xs, |x| 1.0 - (-2.5 * x).exp()).rejected_at(0.01));
        let ys: Vec<f64> = (0..5000).map(|_| exp.sample(&mut rng)).collect();
        assert!(!ks_two_sample(&xs, &ys).rejected_at(0.01));
        let zs: Vec<f64> = ys.iter().map(|y| y * 1.2).collect();
        assert!(ks_two_sample(&xs, &zs).rejected_at(0.01));
    }

    #[test]
    fn chi_square_poisson_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pois = rand_distr::Poisson::new(10.0).unwrap();
        let xs: Vec<u64> = (0..10_000).map(|_| pois.sample(&mut rng) as u64).collect();
        assert!(!chi_square_poisson(&xs, 10.0).rejected_at(0.01));
        assert!(chi_square_poisson(&xs, 11.0).rejected_at(0.01));
    }

    #[test]
    fn gamma_cdf_matches_erlang() {
        // Erlang(2, 1): 1 - e^{-x}(1 + x).
        let f = gamma_cdf(2.0, 1.0);
        for x in [0.1, 1.0, 3.0] {
            assert!((f(x) - (1.0 - (-x).exp() * (1.0 + x))).abs() < 1e-12);
        }
        assert!((exp_cdf(2.0)(0.5) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn moments() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(std_dev(&[1.0, 2.0, 3.0]), 1.0);
    }
}
