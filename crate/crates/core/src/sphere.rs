//! Sampling and cap/wedge geometry on the unit sphere `S^{d-1}`.
//!
//! Everything downstream rests on three quantities:
//!
//! * the cap volume ratio `p_a = (1 - cos^2 a)^{d/2}` (up to poly(d)),
//! * the wedge volume ratio `(1 - gamma^2)^{d/2}` with
//!   `gamma^2 = (cos^2 a + cos^2 b - 2 cos a cos b cos t) / sin^2 t`,
//! * the finite-d probability of the epsilon-band `|<x,c> - cos a| <= eps`,
//!   computed here by 1-D/2-D quadrature of the sphere's marginal density
//!   `(1 - t^2)^{(d-3)/2}`.
//!
//! The quadrature values are the reference for every Monte-Carlo experiment;
//! the exponent formulas are the asymptotic model they are compared against.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::stats::{FreqEstimate, Z_GATE};

/// Norm tolerance for unit vectors.
pub const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SphereError {
    #[error("dimension {0} is invalid here (need {1})")]
    InvalidDimension(usize, &'static str),
    #[error("vector norm {0} is not 1 within 1e-12")]
    NotUnitNorm(f64),
    #[error("cosine {0} outside {1}")]
    CosineOutOfRange(f64, &'static str),
    #[error("epsilon {0} invalid: {1}")]
    BadEpsilon(f64, &'static str),
    #[error("degenerate wedge: separation angle 0 with unequal cap angles")]
    DegenerateWedge,
    #[error("gamma^2 = {0} is outside (0,1); wedge volume not well-defined")]
    GammaOutOfRange(f64),
    #[error("need at least {1} samples, got {0}")]
    TooFewSamples(u64, u64),
    #[error("vectors coincide; normalized difference undefined")]
    CoincidingVectors,
}

/// A point on `S^{d-1}`, norm-checked on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitVector {
    coords: Vec<f64>,
}

impl UnitVector {
    pub fn new(coords: Vec<f64>) -> Result<Self, SphereError> {
        if coords.is_empty() {
            return Err(SphereError::InvalidDimension(0, "d >= 1"));
        }
        let n = norm(&coords);
        if (n - 1.0).abs() > NORM_TOL {
            return Err(SphereError::NotUnitNorm(n));
        }
        Ok(UnitVector { coords })
    }

    /// Normalize an arbitrary nonzero vector onto the sphere.
    pub fn from_unnormalized(mut coords: Vec<f64>) -> Result<Self, SphereError> {
        let n = norm(&coords);
        if n == 0.0 || !n.is_finite() {
            return Err(SphereError::CoincidingVectors);
        }
        for c in &mut coords {
            *c /= n;
        }
        // one re-normalization pass keeps the 1e-12 invariant after rounding
        let n2 = norm(&coords);
        for c in &mut coords {
            *c /= n2;
        }
        Ok(UnitVector { coords })
    }

    /// Standard basis vector e_axis.
    pub fn basis(d: usize, axis: usize) -> Self {
        assert!(axis < d);
        let mut coords = vec![0.0; d];
        coords[axis] = 1.0;
        UnitVector { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.coords, other.coords())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `(x - y) / ||x - y||`; errors when x = y.
pub fn normalized_difference(x: &UnitVector, y: &UnitVector) -> Result<UnitVector, SphereError> {
    let diff: Vec<f64> = x
        .coords()
        .iter()
        .zip(y.coords())
        .map(|(a, b)| a - b)
        .collect();
    UnitVector::from_unnormalized(diff)
}

/// Cap/wedge angle parameters: two cap cosines, the separation cosine of the
/// cap centers, and the band half-width epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSpec {
    pub cos_alpha: f64,
    pub cos_beta: f64,
    pub cos_theta: f64,
    pub epsilon: f64,
}

impl AngleSpec {
    /// `cos_theta` may be 1 (coinciding centers), which is only meaningful on
    /// the equal-angle path.
    pub fn new(
        cos_alpha: f64,
        cos_beta: f64,
        cos_theta: f64,
        epsilon: f64,
    ) -> Result<Self, SphereError> {
        for (c, what) in [(cos_alpha, "cos_alpha"), (cos_beta, "cos_beta")] {
            if !(0.0 < c && c < 1.0) {
                return Err(SphereError::CosineOutOfRange(c, "(0,1)"));
            }
            let _ = what;
        }
        if !(0.0..=1.0).contains(&cos_theta) {
            return Err(SphereError::CosineOutOfRange(cos_theta, "[0,1]"));
        }
        if epsilon <= 0.0 {
            return Err(SphereError::BadEpsilon(epsilon, "must be positive"));
        }
        let cap = cos_alpha.min(1.0 - cos_alpha);
        if epsilon >= cap {
            return Err(SphereError::BadEpsilon(
                epsilon,
                "must be below min(cos_alpha, 1 - cos_alpha)",
            ));
        }
        Ok(AngleSpec {
            cos_alpha,
            cos_beta,
            cos_theta,
            epsilon,
        })
    }
}

/// The global band half-width convention: `1 / (log2 d)^2`.
pub fn epsilon_for(d: usize) -> Result<f64, SphereError> {
    if d < 4 {
        return Err(SphereError::InvalidDimension(d, "d >= 4"));
    }
    let l = (d as f64).log2();
    Ok(1.0 / (l * l))
}

/// Uniform point on `S^{d-1}` by normalizing a Gaussian vector.
///
/// Rejection-style samplers degenerate in high dimension; this does not.
pub fn sample_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> UnitVector {
    assert!(d >= 1, "dimension must be positive");
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(u) = UnitVector::from_unnormalized(v) {
            return u;
        }
        // astronomically unlikely all-zero draw; resample
    }
}

/// Per-dimension log2 exponent of the cap volume: `0.5 log2(1 - cos^2 a)`,
/// so that `p_a = 2^{e d}` up to poly(d).
pub fn cap_exponent(cos_alpha: f64) -> Result<f64, SphereError> {
    if !(0.0..1.0).contains(&cos_alpha) {
        return Err(SphereError::CosineOutOfRange(cos_alpha, "[0,1)"));
    }
    Ok(0.5 * (1.0 - cos_alpha * cos_alpha).log2())
}

/// `gamma^2` of the wedge of caps (alpha, beta) at center separation theta.
///
/// The equal-angle path (`alpha = beta`) evaluates `2 cos^2 a / (1 + cos t)`,
/// which agrees with the general quotient whenever both apply and stays
/// finite at theta = 0. Unequal caps at theta = 0 are a hard error.
pub fn wedge_gamma_sq(spec: &AngleSpec) -> Result<f64, SphereError> {
    let (ca, cb, ct) = (spec.cos_alpha, spec.cos_beta, spec.cos_theta);
    if ca == cb {
        return Ok(2.0 * ca * ca / (1.0 + ct));
    }
    if ct >= 1.0 {
        return Err(SphereError::DegenerateWedge);
    }
    let sin_sq = 1.0 - ct * ct;
    Ok((ca * ca + cb * cb - 2.0 * ca * cb * ct) / sin_sq)
}

/// Per-dimension log2 exponent of the wedge volume: `0.5 log2(1 - gamma^2)`.
pub fn wedge_exponent(spec: &AngleSpec) -> Result<f64, SphereError> {
    let g2 = wedge_gamma_sq(spec)?;
    if !(0.0 < g2 && g2 < 1.0) {
        return Err(SphereError::GammaOutOfRange(g2));
    }
    Ok(0.5 * (1.0 - g2).log2())
}

/// Well-definedness of the wedge volume with margin `kappa_prime`:
/// either the general quotient lies in `[k', 1 - k']` with theta != 0, or the
/// equal-angle expression is at most `1 - k'`.
pub fn is_well_defined(spec: &AngleSpec, kappa_prime: f64) -> bool {
    assert!(
        kappa_prime > 0.0 && kappa_prime < 0.5,
        "kappa_prime must lie in (0, 1/2)"
    );
    let (ca, cb, ct) = (spec.cos_alpha, spec.cos_beta, spec.cos_theta);
    let case1 = if ct < 1.0 {
        let g2 = (ca * ca + cb * cb - 2.0 * ca * cb * ct) / (1.0 - ct * ct);
        kappa_prime <= g2 && g2 <= 1.0 - kappa_prime
    } else {
        false
    };
    let case2 = ca == cb && 2.0 * ca * ca / (1.0 + ct) <= 1.0 - kappa_prime;
    case1 || case2
}

// ---------------------------------------------------------------------------
// Quadrature reference for band probabilities
// ---------------------------------------------------------------------------

/// log of the marginal normalizer `Z_d = int_{-1}^{1} (1-t^2)^{(d-3)/2} dt`.
fn ln_marginal_normalizer(d: usize) -> f64 {
    let df = d as f64;
    0.5 * std::f64::consts::PI.ln() + ln_gamma((df - 1.0) / 2.0) - ln_gamma(df / 2.0)
}

/// Adaptive Simpson on [a, b].
fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
                + rec(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
        }
    }
    if a >= b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// Quadrature value of the band probability
/// `Pr[ |<x,c> - cos a| <= eps ]` for uniform `c` on `S^{d-1}`.
pub fn cap_band_probability(d: usize, cos_alpha: f64, epsilon: f64) -> Result<f64, SphereError> {
    if d < 2 {
        return Err(SphereError::InvalidDimension(d, "d >= 2"));
    }
    if epsilon < 0.0 {
        return Err(SphereError::BadEpsilon(epsilon, "must be nonnegative"));
    }
    let lo = (cos_alpha - epsilon).max(-1.0);
    let hi = (cos_alpha + epsilon).min(1.0);
    if lo >= hi {
        return Ok(0.0);
    }
    let e = (d as f64 - 3.0) / 2.0;
    let f = |t: f64| (1.0 - t * t).max(0.0).powf(e);
    let v = adaptive_simpson(&f, lo, hi, 1e-13);
    Ok(v / ln_marginal_normalizer(d).exp())
}

/// CDF of the marginal `<x,c>` for uniform `c`, used as a KS reference.
pub fn marginal_cdf(d: usize, t: f64) -> f64 {
    if t <= -1.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let e = (d as f64 - 3.0) / 2.0;
    let f = |u: f64| (1.0 - u * u).max(0.0).powf(e);
    adaptive_simpson(&f, -1.0, t, 1e-13) / ln_marginal_normalizer(d).exp()
}

/// Quadrature value of the wedge band probability
/// `Pr[ |<x,c> - cos a| <= eps and |<y,c> - cos b| <= eps ]` for uniform `c`,
/// with `<x,y> = cos t` exactly.
///
/// For `cos t = 1` the two constraints act on the same coordinate and the
/// value reduces to the intersection of the two 1-D bands.
pub fn wedge_band_probability(d: usize, spec: &AngleSpec) -> Result<f64, SphereError> {
    wedge_band_probability_raw(d, spec.cos_alpha, spec.cos_beta, spec.cos_theta, spec.epsilon)
}

/// [`wedge_band_probability`] on raw parameters, without the `AngleSpec`
/// band-width invariant; any nonnegative epsilon is accepted.
pub fn wedge_band_probability_raw(
    d: usize,
    ca: f64,
    cb: f64,
    ct: f64,
    eps: f64,
) -> Result<f64, SphereError> {
    if d < 3 {
        return Err(SphereError::InvalidDimension(d, "d >= 3"));
    }
    if eps < 0.0 {
        return Err(SphereError::BadEpsilon(eps, "must be nonnegative"));
    }
    if ct >= 1.0 {
        let lo = (ca - eps).max(cb - eps).max(-1.0);
        let hi = (ca + eps).min(cb + eps).min(1.0);
        if lo >= hi {
            return Ok(0.0);
        }
        let e = (d as f64 - 3.0) / 2.0;
        let f = |t: f64| (1.0 - t * t).max(0.0).powf(e);
        return Ok(adaptive_simpson(&f, lo, hi, 1e-13) / ln_marginal_normalizer(d).exp());
    }
    let st = (1.0 - ct * ct).sqrt();
    // c = t x + u xp + rest, y = ct x + st xp; joint density of (t,u) on the
    // unit disk is (1 - t^2 - u^2)^{(d-4)/2} / (2 pi / (d-2)).
    let e_inner = (d as f64 - 4.0) / 2.0;
    let inner = |t: f64| -> f64 {
        let m = 1.0 - t * t;
        if m <= 0.0 {
            return 0.0;
        }
        let r = m.sqrt();
        let lo = ((cb - eps - t * ct) / st).max(-r);
        let hi = ((cb + eps - t * ct) / st).min(r);
        if lo >= hi {
            return 0.0;
        }
        let g = |u: f64| (m - u * u).max(0.0).powf(e_inner);
        adaptive_simpson(&g, lo, hi, 1e-14)
    };
    let lo = (ca - eps).max(-1.0);
    let hi = (ca + eps).min(1.0);
    if lo >= hi {
        return Ok(0.0);
    }
    let v = adaptive_simpson(&inner, lo, hi, 1e-13);
    Ok(v * (d as f64 - 2.0) / (2.0 * std::f64::consts::PI))
}

// ---------------------------------------------------------------------------
// Monte-Carlo estimators
// ---------------------------------------------------------------------------

pub const MIN_MC_SAMPLES: u64 = 10_000;

/// Empirical frequency of `|<x,c> - cos a| <= eps` for fixed x and uniform c.
pub fn mc_cap_probability<R: Rng + ?Sized>(
    d: usize,
    cos_alpha: f64,
    epsilon: f64,
    n_samples: u64,
    rng: &mut R,
) -> Result<FreqEstimate, SphereError> {
    if n_samples < MIN_MC_SAMPLES {
        return Err(SphereError::TooFewSamples(n_samples, MIN_MC_SAMPLES));
    }
    if d < 2 {
        return Err(SphereError::InvalidDimension(d, "d >= 2"));
    }
    let mut hits = 0u64;
    for _ in 0..n_samples {
        let c = sample_unit_vector(d, rng);
        // by rotational symmetry x may be fixed to e_1: <x,c> = c_1
        if (c.coords()[0] - cos_alpha).abs() <= epsilon {
            hits += 1;
        }
    }
    Ok(FreqEstimate::from_counts(hits, n_samples, Z_GATE))
}

/// Empirical frequency of the two-band wedge event for a fixed pair (x, y)
/// constructed at exact separation `cos t`.
pub fn mc_wedge_probability<R: Rng + ?Sized>(
    d: usize,
    spec: &AngleSpec,
    n_samples: u64,
    rng: &mut R,
) -> Result<FreqEstimate, SphereError> {
    if n_samples < MIN_MC_SAMPLES {
        return Err(SphereError::TooFewSamples(n_samples, MIN_MC_SAMPLES));
    }
    if d < 2 {
        return Err(SphereError::InvalidDimension(d, "d >= 2"));
    }
    let ct = spec.cos_theta;
    let st = (1.0 - ct * ct).max(0.0).sqrt();
    let mut hits = 0u64;
    for _ in 0..n_samples {
        let c = sample_unit_vector(d, rng);
        // x = e1, y = ct e1 + st e2
        let ip_x = c.coords()[0];
        let ip_y = ct * c.coords()[0] + st * c.coords()[1];
        if (ip_x - spec.cos_alpha).abs() <= spec.epsilon
            && (ip_y - spec.cos_beta).abs() <= spec.epsilon
        {
            hits += 1;
        }
    }
    Ok(FreqEstimate::from_counts(hits, n_samples, Z_GATE))
}

/// Parallel cap-band estimator over named worker substreams. Hit counts are
/// integers, so the result is bit-identical for a fixed (seed, workers) pair.
pub fn mc_cap_probability_par(
    d: usize,
    cos_alpha: f64,
    epsilon: f64,
    n_samples: u64,
    seed: u64,
    stream: &str,
    workers: usize,
) -> Result<FreqEstimate, SphereError> {
    mc_par(n_samples, seed, stream, workers, move |rng, n| {
        let mut hits = 0u64;
        for _ in 0..n {
            let c = sample_unit_vector(d, rng);
            if (c.coords()[0] - cos_alpha).abs() <= epsilon {
                hits += 1;
            }
        }
        hits
    })
}

/// Parallel wedge-band estimator; see [`mc_cap_probability_par`].
pub fn mc_wedge_probability_par(
    d: usize,
    spec: &AngleSpec,
    n_samples: u64,
    seed: u64,
    stream: &str,
    workers: usize,
) -> Result<FreqEstimate, SphereError> {
    let spec = *spec;
    let ct = spec.cos_theta;
    let st = (1.0 - ct * ct).max(0.0).sqrt();
    mc_par(n_samples, seed, stream, workers, move |rng, n| {
        let mut hits = 0u64;
        for _ in 0..n {
            let c = sample_unit_vector(d, rng);
            let ip_x = c.coords()[0];
            let ip_y = ct * c.coords()[0] + st * c.coords()[1];
            if (ip_x - spec.cos_alpha).abs() <= spec.epsilon
                && (ip_y - spec.cos_beta).abs() <= spec.epsilon
            {
                hits += 1;
            }
        }
        hits
    })
}

fn mc_par<F>(
    n_samples: u64,
    seed: u64,
    stream: &str,
    workers: usize,
    count: F,
) -> Result<FreqEstimate, SphereError>
where
    F: Fn(&mut rand_chacha::ChaCha12Rng, u64) -> u64 + Sync,
{
    use rayon::prelude::*;
    if n_samples < MIN_MC_SAMPLES {
        return Err(SphereError::TooFewSamples(n_samples, MIN_MC_SAMPLES));
    }
    let workers = workers.max(1) as u64;
    let per = n_samples / workers;
    let rem = n_samples % workers;
    let hits: u64 = (0..workers)
        .into_par_iter()
        .map(|w| {
            let mut rng = crate::rng::substream_indexed(seed, stream, w);
            let n = per + if w < rem { 1 } else { 0 };
            count(&mut rng, n)
        })
        .sum();
    Ok(FreqEstimate::from_counts(hits, n_samples, Z_GATE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn epsilon_for_matches_convention() {
        assert!((epsilon_for(4).unwrap() - 0.25).abs() < 1e-15);
        assert!((epsilon_for(16).unwrap() - 0.0625).abs() < 1e-15);
        // d = 100: direct high-precision evaluation of 1/(log2 100)^2
        assert!((epsilon_for(100).unwrap() - 0.022654764572364134).abs() < 1e-12);
        assert!(epsilon_for(3).is_err());
    }

    #[test]
    fn sampling_d1_is_fair_sign() {
        let mut rng = substream(11, "sphere/d1");
        let n = 100_000u64;
        let mut plus = 0u64;
        for _ in 0..n {
            let v = sample_unit_vector(1, &mut rng);
            assert!((v.coords()[0].abs() - 1.0).abs() < 1e-12);
            if v.coords()[0] > 0.0 {
                plus += 1;
            }
        }
        // two-sided binomial test at the 1e-4 level via the normal bound
        let dev = (plus as f64 - n as f64 / 2.0).abs() / ((n as f64) / 4.0).sqrt();
        assert!(dev < Z_GATE, "sign bias too large: z = {dev}");
    }

    #[test]
    fn sampling_d3_mean_within_clt_bound() {
        let mut rng = substream(12, "sphere/d3");
        let n = 1_000_000usize;
        let mut sums = [0.0f64; 3];
        for _ in 0..n {
            let v = sample_unit_vector(3, &mut rng);
            for (s, c) in sums.iter_mut().zip(v.coords()) {
                *s += c;
            }
        }
        // coordinate variance is 1/3 < 1; 4/sqrt(n) is the stated CLT budget
        let bound = 4.0 / (n as f64).sqrt();
        for s in sums {
            assert!((s / n as f64).abs() < bound, "mean {} vs bound {bound}", s / n as f64);
        }
    }

    #[test]
    fn cap_exponent_paper_values() {
        assert_eq!(cap_exponent(0.0).unwrap(), 0.0);
        assert!((cap_exponent(0.347606).unwrap() - (-0.092893)).abs() < 1e-5);
        assert!((cap_exponent(0.427124).unwrap() - (-0.145298)).abs() < 3e-5);
        assert!(cap_exponent(1.0).is_err());
    }

    #[test]
    fn cap_exponent_strictly_decreasing() {
        let mut last = cap_exponent(0.001).unwrap();
        for i in 2..999 {
            let c = i as f64 / 1000.0;
            let e = cap_exponent(c).unwrap();
            assert!(e < last, "not strictly decreasing at cos = {c}");
            last = e;
        }
    }

    #[test]
    fn wedge_gamma_matches_derived_values() {
        // caps (theta, alpha) at separation alpha, optimal shape
        let spec = AngleSpec::new(1.0 / 3.0, 0.347606, 0.347606, 0.01).unwrap();
        let g2 = wedge_gamma_sq(&spec).unwrap();
        assert!((g2 - 0.17219).abs() < 5e-5, "gamma^2 = {g2}");
        // equal-angle path at theta' = arccos(1/sqrt 3)
        let spec2 = AngleSpec::new(0.427124, 0.427124, 1.0 / 3.0f64.sqrt(), 0.01).unwrap();
        let g22 = wedge_gamma_sq(&spec2).unwrap();
        assert!((1.0 - g22 - 0.768683).abs() < 2e-6, "1-gamma^2 = {}", 1.0 - g22);
    }

    #[test]
    fn wedge_degenerates_to_cap_at_theta_zero() {
        let spec = AngleSpec::new(0.4, 0.4, 1.0, 0.01).unwrap();
        let g2 = wedge_gamma_sq(&spec).unwrap();
        assert!((g2 - 0.16).abs() < 1e-15, "gamma^2 should equal cos^2 alpha");
        assert!(
            (wedge_exponent(&spec).unwrap() - cap_exponent(0.4).unwrap()).abs() < 1e-15
        );
        // unequal caps at theta = 0 must hard-error
        let bad = AngleSpec::new(0.4, 0.5, 1.0, 0.01).unwrap();
        assert!(matches!(wedge_gamma_sq(&bad), Err(SphereError::DegenerateWedge)));
    }

    #[test]
    fn wedge_exponent_paper_values() {
        let eps = 0.01;
        let w1 = AngleSpec::new(1.0 / 3.0, 0.347606, 0.347606, eps).unwrap();
        assert!((wedge_exponent(&w1).unwrap() - (-0.136318)).abs() < 2e-5);
        let w2 = AngleSpec::new(1.0 / 3.0f64.sqrt(), 0.427124, 0.427124, eps).unwrap();
        assert!((wedge_exponent(&w2).unwrap() - (-0.336954)).abs() < 2e-5);
    }

    #[test]
    fn gamma_symmetric_and_paths_agree() {
        let a = AngleSpec::new(0.3, 0.5, 0.4, 0.01).unwrap();
        let b = AngleSpec::new(0.5, 0.3, 0.4, 0.01).unwrap();
        assert!((wedge_gamma_sq(&a).unwrap() - wedge_gamma_sq(&b).unwrap()).abs() < 1e-15);
        // alpha = beta, theta > 0: equal-angle and general formulas agree
        for ct in [0.1, 1.0 / 3.0, 0.6] {
            for ca in [0.2, 0.347606, 0.5] {
                let general = (2.0 * ca * ca - 2.0 * ca * ca * ct) / (1.0 - ct * ct);
                let spec = AngleSpec::new(ca, ca, ct, 0.01).unwrap();
                assert!((wedge_gamma_sq(&spec).unwrap() - general).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn well_definedness_cases() {
        let opt = AngleSpec::new(1.0 / 3.0, 0.347606, 0.347606, 0.01).unwrap();
        assert!(is_well_defined(&opt, 0.01));
        let big = AngleSpec::new(0.99, 0.99, 0.0, 0.001).unwrap();
        assert!(!is_well_defined(&big, 0.01), "caps too large: gamma^2 ~ 1.96");
        // equal angles at theta = 0 consult the case-(2) branch
        let eq = AngleSpec::new(0.5, 0.5, 1.0, 0.01).unwrap();
        assert!(is_well_defined(&eq, 0.01));
    }

    #[test]
    fn quadrature_brackets_and_zero_band() {
        // epsilon = 0 band has measure zero
        assert_eq!(cap_band_probability(24, 0.5, 0.0).unwrap(), 0.0);
        // whole-sphere sanity: band of eps = 1 around 0 is most of the sphere
        let p = cap_band_probability(8, 0.0, 0.999).unwrap();
        assert!(p > 0.999, "p = {p}");
    }

    #[test]
    fn mc_cap_matches_quadrature_d24() {
        let d = 24;
        let eps = 0.05;
        let truth = cap_band_probability(d, 0.0, eps).unwrap();
        let mut rng = substream(13, "sphere/mc-cap");
        let est = mc_cap_probability(d, 0.0, eps, 200_000, &mut rng).unwrap();
        assert!(est.contains(truth), "quadrature {truth} outside CI [{}, {}]", est.ci_low, est.ci_high);
    }

    #[test]
    fn mc_cap_zero_band_flags() {
        let mut rng = substream(14, "sphere/mc-cap0");
        let est = mc_cap_probability(16, 0.5, 0.0, 10_000, &mut rng).unwrap();
        assert!(est.zero_hits && est.p_hat == 0.0);
    }

    #[test]
    fn mc_wedge_coinciding_caps_equals_cap() {
        // theta = 0 (y = x): wedge event = the band intersected with itself
        let d = 16;
        let spec = AngleSpec::new(0.4, 0.4, 1.0, 0.05).unwrap();
        let truth = wedge_band_probability(d, &spec).unwrap();
        let cap = cap_band_probability(d, 0.4, 0.05).unwrap();
        assert!((truth - cap).abs() < 1e-12);
        let mut rng = substream(15, "sphere/mc-wedge0");
        let est = mc_wedge_probability(d, &spec, 200_000, &mut rng).unwrap();
        assert!(est.contains(truth));
    }

    #[test]
    fn mc_wedge_disjoint_caps_zero_hits() {
        let spec = AngleSpec::new(0.9, 0.9, 0.0, 0.02).unwrap();
        let mut rng = substream(16, "sphere/mc-wedge-disjoint");
        let est = mc_wedge_probability(20, &spec, 10_000, &mut rng).unwrap();
        assert!(est.zero_hits, "antipodal-ish caps with tiny bands cannot both hold");
    }

    #[test]
    fn mc_wedge_matches_quadrature_d20() {
        let d = 20;
        let eps = epsilon_for(d).unwrap();
        let spec = AngleSpec::new(0.45, 0.45, 1.0 / 3.0, eps).unwrap();
        let truth = wedge_band_probability(d, &spec).unwrap();
        let mut rng = substream(17, "sphere/mc-wedge");
        let est = mc_wedge_probability(d, &spec, 2_000_000, &mut rng).unwrap();
        assert!(est.contains(truth), "quadrature {truth} outside CI [{}, {}]", est.ci_low, est.ci_high);
    }

    #[test]
    fn parallel_mc_is_deterministic() {
        let a = mc_cap_probability_par(16, 0.3, 0.05, 50_000, 3, "par-test", 4).unwrap();
        let b = mc_cap_probability_par(16, 0.3, 0.05, 50_000, 3, "par-test", 4).unwrap();
        assert_eq!(a.hits, b.hits);
    }

    #[test]
    fn norm_invariant_holds_for_samples() {
        let mut rng = substream(18, "sphere/norm");
        for d in [2usize, 5, 24, 60] {
            for _ in 0..50 {
                let v = sample_unit_vector(d, &mut rng);
                assert!((norm(v.coords()) - 1.0).abs() <= NORM_TOL);
            }
        }
    }
}
