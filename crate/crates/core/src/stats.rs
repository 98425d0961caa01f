//! Small statistical helpers shared by the verification experiments:
//! Wilson intervals for binomial estimates, chi-square goodness of fit with
//! small-bin pooling, and the asymptotic Kolmogorov–Smirnov test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// z for a two-sided normal tail of 1e-4 (the gate level used throughout).
pub const Z_GATE: f64 = 3.890_591_886_413_094;

/// A binomial frequency estimate with a Wilson score interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FreqEstimate {
    pub hits: u64,
    pub samples: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Set when no hit was observed; the interval is then [0, upper].
    pub zero_hits: bool,
}

impl FreqEstimate {
    pub fn from_counts(hits: u64, samples: u64, z: f64) -> Self {
        assert!(samples > 0, "empty sample");
        let n = samples as f64;
        let p = hits as f64 / n;
        let z2 = z * z;
        let denom = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / denom;
        let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        FreqEstimate {
            hits,
            samples,
            p_hat: p,
            ci_low: (center - half).max(0.0),
            ci_high: (center + half).min(1.0),
            zero_hits: hits == 0,
        }
    }

    pub fn contains(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }
}

/// Result of a chi-square goodness-of-fit test.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: u64,
    pub p_value: f64,
    /// Bins after pooling low-expectation cells.
    pub bins: usize,
    pub total_draws: u64,
}

/// Chi-square test of observed counts against expected counts.
///
/// Cells with expected count below `min_expected` are pooled into one bin so
/// the asymptotic distribution applies. `observed` and `expected` must align;
/// expected counts are taken as absolute counts (not probabilities).
pub fn chi_square_test(observed: &[u64], expected: &[f64], min_expected: f64) -> ChiSquareResult {
    assert_eq!(observed.len(), expected.len());
    let total: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut bins = 0usize;
    let mut pooled_obs = 0.0;
    let mut pooled_exp = 0.0;
    for (&o, &e) in observed.iter().zip(expected) {
        if e < min_expected {
            pooled_obs += o as f64;
            pooled_exp += e;
        } else {
            let d = o as f64 - e;
            stat += d * d / e;
            bins += 1;
        }
    }
    if pooled_exp > 0.0 {
        let d = pooled_obs - pooled_exp;
        stat += d * d / pooled_exp;
        bins += 1;
    }
    let dof = bins.saturating_sub(1).max(1) as u64;
    let p_value = if stat.is_finite() {
        1.0 - ChiSquared::new(dof as f64).expect("dof >= 1").cdf(stat)
    } else {
        0.0
    };
    ChiSquareResult {
        statistic: stat,
        dof,
        p_value,
        bins,
        total_draws: total,
    }
}

/// Result of a one-sample Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub samples: usize,
}

/// One-sample KS test of `samples` against a CDF, with the asymptotic
/// Kolmogorov p-value `Q(sqrt(n) D)`.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> KsResult {
    let n = samples.len();
    assert!(n > 0);
    samples.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN samples"));
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / nf).abs());
        d = d.max(((i + 1) as f64 / nf - f).abs());
    }
    KsResult {
        statistic: d,
        p_value: kolmogorov_q(nf.sqrt() * d),
        samples: n,
    }
}

/// Kolmogorov distribution tail Q(t) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 t^2).
fn kolmogorov_q(t: f64) -> f64 {
    if t < 1e-8 {
        return 1.0;
    }
    let mut q = 0.0;
    for k in 1..200 {
        let term = (-2.0 * (k * k) as f64 * t * t).exp();
        if term < 1e-300 {
            break;
        }
        q += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
    }
    q.clamp(0.0, 1.0)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}
