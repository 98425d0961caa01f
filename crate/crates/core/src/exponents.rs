//! Asymptotic cost model of the emulated search and its numerical optimizer.
//!
//! All quantities are per-dimension log2 exponents: a cost `2^{e d + o(d)}`
//! is represented by `e`. With the first-level separation fixed at
//! `cos t = 1/3` and the second level at `cos t' = 1/sqrt(3)`, the model in
//! the two free cap cosines (a, a') is
//!
//! ```text
//! e_ell1   = (e_pa - e_W(a,a|t)) + (e_pa' - e_W(a',a'|t'))
//! e_search = -min(0, m + e_W(t',a'|a'))/2
//!            + max( (e_pa - e_W(t,a|a))/2 , (m + e_pa')/2 )
//! e_total  = m + max(e_ell1, e_search)
//! ```
//!
//! subject to strict positivity of `m+e_pa`, `m+e_pa'`, `m+e_W(t,a|a)` and
//! `2m+e_W(t',a'|a')`. At the optimum the outer and inner max terms balance,
//! so the argmin sits on a kink; stationarity is therefore certified through
//! one-sided directional differences (all ascent) rather than a vanishing
//! central-difference gradient, which does not exist there.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sphere::{cap_exponent, is_well_defined, wedge_exponent, AngleSpec};

pub const COS_THETA: f64 = 1.0 / 3.0;
/// The second-level separation is treated as exactly 1/sqrt(3) in the
/// asymptotic model; the finite-d epsilon correction lives in the sieve.
pub fn cos_theta_prime() -> f64 {
    1.0 / 3.0f64.sqrt()
}

/// Wedge well-definedness margin used by the model.
pub const KAPPA_PRIME: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ExponentError {
    #[error("no feasible point in the search box")]
    NoFeasiblePoint,
    #[error("search box {0} invalid: must satisfy 0 < lo < hi < 1")]
    BadBox(String),
    #[error("memory exponent {0} must be positive")]
    BadMemoryExponent(f64),
}

/// Marker for a parameter pair rejected by the constraint set; the optimizer
/// skips such points rather than treating them as errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfeasiblePoint {
    pub reason: InfeasibleReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfeasibleReason {
    WedgeNotWellDefined,
    ConstraintViolated,
}

/// One evaluated parameter pair with every intermediate exponent.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExponentPoint {
    pub cos_alpha: f64,
    pub cos_alpha_prime: f64,
    pub m_exp: f64,
    pub e_p_alpha: f64,
    pub e_p_alpha_prime: f64,
    /// wedge of caps (theta, alpha) at separation alpha
    pub e_w_theta_alpha: f64,
    /// wedge of caps (theta', alpha') at separation alpha'
    pub e_w_theta_prime_alpha_prime: f64,
    /// wedge of caps (alpha, alpha) at separation theta
    pub e_w_alpha_alpha_theta: f64,
    /// wedge of caps (alpha', alpha') at separation theta'
    pub e_w_alpha_prime_alpha_prime_theta_prime: f64,
    pub e_ell1: f64,
    pub e_search: f64,
    pub e_total: f64,
    /// smallest slack among the four positivity constraints
    pub constraint_margin: f64,
}

fn wedge(e_cap_a: f64, cap_a: f64, cap_b: f64, sep: f64) -> Option<f64> {
    let _ = e_cap_a;
    let spec = AngleSpec::new(cap_a, cap_b, sep, 1e-9).ok()?;
    if !is_well_defined(&spec, KAPPA_PRIME) {
        return None;
    }
    wedge_exponent(&spec).ok()
}

/// Evaluate the model at one `(cos a, cos a')` pair for memory exponent
/// `m_exp`. Constraint violations come back as `InfeasiblePoint`.
pub fn time_exponent(
    cos_alpha: f64,
    cos_alpha_prime: f64,
    m_exp: f64,
) -> Result<ExponentPoint, InfeasiblePoint> {
    let infeasible = |reason| Err(InfeasiblePoint { reason });
    if !(0.0 < cos_alpha && cos_alpha < 1.0 && 0.0 < cos_alpha_prime && cos_alpha_prime < 1.0) {
        return infeasible(InfeasibleReason::WedgeNotWellDefined);
    }
    let ct = COS_THETA;
    let ctp = cos_theta_prime();
    let e_pa = match cap_exponent(cos_alpha) {
        Ok(v) => v,
        Err(_) => return infeasible(InfeasibleReason::WedgeNotWellDefined),
    };
    let e_pap = match cap_exponent(cos_alpha_prime) {
        Ok(v) => v,
        Err(_) => return infeasible(InfeasibleReason::WedgeNotWellDefined),
    };
    let (Some(e_w_ta), Some(e_w_aat), Some(e_w_tpap), Some(e_w_apaptp)) = (
        wedge(e_pa, ct, cos_alpha, cos_alpha),
        wedge(e_pa, cos_alpha, cos_alpha, ct),
        wedge(e_pap, ctp, cos_alpha_prime, cos_alpha_prime),
        wedge(e_pap, cos_alpha_prime, cos_alpha_prime, ctp),
    ) else {
        return infeasible(InfeasibleReason::WedgeNotWellDefined);
    };
    let margins = [
        m_exp + e_pa,
        m_exp + e_pap,
        m_exp + e_w_ta,
        2.0 * m_exp + e_w_tpap,
    ];
    let constraint_margin = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    if constraint_margin <= 0.0 {
        return infeasible(InfeasibleReason::ConstraintViolated);
    }
    let e_ell1 = (e_pa - e_w_aat) + (e_pap - e_w_apaptp);
    let e_search = -0.5 * (m_exp + e_w_tpap).min(0.0)
        + (0.5 * (e_pa - e_w_ta)).max(0.5 * (m_exp + e_pap));
    let e_total = m_exp + e_ell1.max(e_search);
    Ok(ExponentPoint {
        cos_alpha,
        cos_alpha_prime,
        m_exp,
        e_p_alpha: e_pa,
        e_p_alpha_prime: e_pap,
        e_w_theta_alpha: e_w_ta,
        e_w_theta_prime_alpha_prime: e_w_tpap,
        e_w_alpha_alpha_theta: e_w_aat,
        e_w_alpha_prime_alpha_prime_theta_prime: e_w_apaptp,
        e_ell1,
        e_search,
        e_total,
        constraint_margin,
    })
}

/// Square search box in the `(cos a, cos a')` plane.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SearchBox {
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub alpha_prime_lo: f64,
    pub alpha_prime_hi: f64,
}

impl Default for SearchBox {
    fn default() -> Self {
        SearchBox {
            alpha_lo: 0.15,
            alpha_hi: 0.75,
            alpha_prime_lo: 0.15,
            alpha_prime_hi: 0.75,
        }
    }
}

impl SearchBox {
    fn validate(&self) -> Result<(), ExponentError> {
        let ok = 0.0 < self.alpha_lo
            && self.alpha_lo < self.alpha_hi
            && self.alpha_hi < 1.0
            && 0.0 < self.alpha_prime_lo
            && self.alpha_prime_lo < self.alpha_prime_hi
            && self.alpha_prime_hi < 1.0;
        if ok {
            Ok(())
        } else {
            Err(ExponentError::BadBox(format!("{self:?}")))
        }
    }

    fn clamp(&self, a: f64, ap: f64) -> (f64, f64) {
        (
            a.clamp(self.alpha_lo, self.alpha_hi),
            ap.clamp(self.alpha_prime_lo, self.alpha_prime_hi),
        )
    }

    fn on_boundary(&self, a: f64, ap: f64, tol: f64) -> bool {
        (a - self.alpha_lo).abs() <= tol
            || (a - self.alpha_hi).abs() <= tol
            || (ap - self.alpha_prime_lo).abs() <= tol
            || (ap - self.alpha_prime_hi).abs() <= tol
    }
}

/// First-order optimality evidence at the returned argmin.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StationarityReport {
    /// Worst (most negative) one-sided slope over the 8 compass directions;
    /// nonnegative up to tolerance means no descent direction exists.
    pub min_directional_slope: f64,
    /// Central differences per coordinate. At a balanced kink these converge
    /// to the mean of the one-sided slopes, not to zero; reported for
    /// transparency, not gated.
    pub central_diff_alpha: f64,
    pub central_diff_alpha_prime: f64,
    /// |e_ell1 - e_search| at the argmin (the balancing identity).
    pub balance_residual: f64,
    pub step: f64,
    pub first_order_minimal: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub argmin: ExponentPoint,
    pub stationarity: StationarityReport,
    /// Set when the argmin sits on the search-box boundary (the box excludes
    /// the interior optimum).
    pub boundary: bool,
    pub grid_step: f64,
    pub evaluations: u64,
}

fn eval_total(a: f64, ap: f64, m_exp: f64, evals: &mut u64) -> f64 {
    *evals += 1;
    match time_exponent(a, ap, m_exp) {
        Ok(p) => p.e_total,
        Err(_) => f64::INFINITY,
    }
}

/// Golden-section minimization of f over [lo, hi].
fn golden_section<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, iters: u32) -> f64 {
    let gr = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - gr * (b - a);
    let mut d = a + gr * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Deterministic minimization of the total exponent over the box: a fixed
/// grid pass (step `grid_step`) followed by golden-section line searches
/// along the two axes and the two diagonals with shrinking brackets. The
/// diagonal searches matter: the optimum is a two-term balance kink, where
/// axis-only refinement stalls.
pub fn optimize(
    m_exp: f64,
    search_box: &SearchBox,
    tolerance: f64,
) -> Result<OptimizeResult, ExponentError> {
    if m_exp <= 0.0 {
        return Err(ExponentError::BadMemoryExponent(m_exp));
    }
    search_box.validate()?;
    let grid_step = 1e-3;
    let mut evals = 0u64;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let mut a = search_box.alpha_lo;
    while a <= search_box.alpha_hi + 1e-12 {
        let mut ap = search_box.alpha_prime_lo;
        while ap <= search_box.alpha_prime_hi + 1e-12 {
            let v = eval_total(a, ap, m_exp, &mut evals);
            if v < best.0 {
                best = (v, a, ap);
            }
            ap += grid_step;
        }
        a += grid_step;
    }
    if !best.0.is_finite() {
        return Err(ExponentError::NoFeasiblePoint);
    }
    let (mut va, mut a, mut ap) = best;
    let dirs = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, -1.0)];
    let mut width = 2.0 * grid_step;
    let floor = tolerance.max(1e-12).min(1e-9);
    for _sweep in 0..200 {
        for &(dx, dy) in &dirs {
            let n = (dx * dx + dy * dy as f64).sqrt();
            let (ux, uy) = (dx / n, dy / n);
            let t = golden_section(
                |t| {
                    let (pa, pap) = search_box.clamp(a + t * ux, ap + t * uy);
                    eval_total(pa, pap, m_exp, &mut evals)
                },
                -width,
                width,
                70,
            );
            let (na, nap) = search_box.clamp(a + t * ux, ap + t * uy);
            let nv = eval_total(na, nap, m_exp, &mut evals);
            if nv < va {
                va = nv;
                a = na;
                ap = nap;
            }
        }
        width = (width * 0.7).max(floor);
        if width <= floor {
            break;
        }
    }
    let argmin = time_exponent(a, ap, m_exp).map_err(|_| ExponentError::NoFeasiblePoint)?;
    let h = 1e-6;
    let mut slope_min = f64::INFINITY;
    for (dx, dy) in [
        (1.0, 0.0),
        (-1.0, 0.0),
        (0.0, 1.0),
        (0.0, -1.0),
        (1.0, 1.0),
        (1.0, -1.0),
        (-1.0, 1.0),
        (-1.0, -1.0),
    ] {
        let n = (dx * dx + dy * dy as f64).sqrt();
        let (pa, pap) = search_box.clamp(a + h * dx / n, ap + h * dy / n);
        if (pa, pap) == (a, ap) {
            continue; // direction leaves the box
        }
        let v = eval_total(pa, pap, m_exp, &mut evals);
        slope_min = slope_min.min((v - va) / h);
    }
    let mut central = |dx: f64, dy: f64| {
        let vp = eval_total(a + h * dx, ap + h * dy, m_exp, &mut evals);
        let vm = eval_total(a - h * dx, ap - h * dy, m_exp, &mut evals);
        (vp - vm) / (2.0 * h)
    };
    let stationarity = StationarityReport {
        min_directional_slope: slope_min,
        central_diff_alpha: central(1.0, 0.0),
        central_diff_alpha_prime: central(0.0, 1.0),
        balance_residual: (argmin.e_ell1 - argmin.e_search).abs(),
        step: h,
        first_order_minimal: slope_min >= -1e-4,
    };
    Ok(OptimizeResult {
        argmin,
        stationarity,
        boundary: search_box.on_boundary(a, ap, 2.0 * grid_step),
        grid_step,
        evaluations: evals,
    })
}

/// Literature time exponents quoted alongside this artifact's computed one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TupleComplexityRow {
    pub k: usize,
    /// memory exponent computed from the minimal list-size formula
    pub memory: f64,
    /// best known classical time exponent (cited constant)
    pub classical_time_cited: f64,
    /// best known quantum time exponent prior to this construction (cited)
    pub quantum_time_cited: f64,
    /// this artifact's optimized quantum time exponent (k = 3 only)
    pub quantum_time_computed: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table1Report {
    pub rows: Vec<TupleComplexityRow>,
    /// note distinguishing computed values from cited ones
    pub provenance: String,
}

/// The k = 2, 3, 4 complexity table: memory column computed from the list
/// size formula, time columns quoted from the literature, and the k = 3
/// quantum time recomputed by the optimizer.
pub fn table1_report() -> Result<Table1Report, ExponentError> {
    let cited = [(2usize, 0.2925, 0.2563), (3, 0.3383, 0.3098), (4, 0.3766, 0.3178)];
    let m3 = crate::sieve::min_list_size(3, 2).expect("k = 3 valid").1;
    let opt = optimize(m3, &SearchBox::default(), 1e-9)?;
    let mut rows = Vec::new();
    for (k, ct, qt) in cited {
        let (_, mem) = crate::sieve::min_list_size(k, 2).expect("k >= 2");
        rows.push(TupleComplexityRow {
            k,
            memory: mem,
            classical_time_cited: ct,
            quantum_time_cited: qt,
            quantum_time_computed: (k == 3).then_some(opt.argmin.e_total),
        });
    }
    Ok(Table1Report {
        rows,
        provenance: "memory column and k=3 quantum_time_computed are computed here; \
                     classical_time_cited and quantum_time_cited are literature values"
            .to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const M3_EXP: f64 = 0.188722;

    #[test]
    fn reproduces_headline_constants() {
        let p = time_exponent(0.347606, 0.427124, M3_EXP).unwrap();
        assert!((p.e_total - 0.284551).abs() < 2e-5, "e_total = {}", p.e_total);
        assert!((p.e_p_alpha - (-0.092893)).abs() < 3e-5);
        assert!((p.e_p_alpha_prime - (-0.145298)).abs() < 3e-5);
        assert!((p.e_w_theta_alpha - (-0.136318)).abs() < 3e-5);
        assert!((p.e_w_theta_prime_alpha_prime - (-0.336954)).abs() < 3e-5);
        assert!((M3_EXP + p.e_w_theta_prime_alpha_prime - (-0.148233)).abs() < 3e-5);
        assert!((p.e_ell1 - 0.095829).abs() < 2e-5, "e_ell1 = {}", p.e_ell1);
    }

    #[test]
    fn optimizer_finds_the_paper_optimum() {
        let r = optimize(M3_EXP, &SearchBox::default(), 1e-9).unwrap();
        assert!((r.argmin.e_total - 0.284551).abs() < 2e-5, "min {}", r.argmin.e_total);
        assert!((r.argmin.cos_alpha - 0.347606).abs() < 5e-4);
        assert!((r.argmin.cos_alpha_prime - 0.427124).abs() < 5e-4);
        assert!(!r.boundary);
        assert!(r.stationarity.first_order_minimal, "slope {}", r.stationarity.min_directional_slope);
        assert!(r.stationarity.balance_residual <= 1e-4);
        assert!(r.argmin.constraint_margin > 1e-3);
    }

    #[test]
    fn larger_memory_is_feasible_and_pinned() {
        // the task size scales with the list size, so the 2-list memory
        // regime is feasible but not faster; 0.299136 was computed with an
        // independent optimizer (Nelder-Mead + global grid)
        let roomy = optimize(0.2075, &SearchBox::default(), 1e-9).unwrap();
        assert!(roomy.argmin.constraint_margin > 0.0);
        assert!(
            (roomy.argmin.e_total - 0.299136).abs() < 1e-4,
            "min at m=0.2075: {}",
            roomy.argmin.e_total
        );
    }

    #[test]
    fn degenerate_box_returns_boundary_point() {
        let box_ = SearchBox {
            alpha_lo: 0.40,
            alpha_hi: 0.46,
            alpha_prime_lo: 0.40,
            alpha_prime_hi: 0.47,
        };
        let r = optimize(M3_EXP, &box_, 1e-9).unwrap();
        assert!(r.boundary, "optimum excluded, result must be clamped to the box");
    }

    #[test]
    fn infeasible_points_are_markers_not_errors() {
        // gigantic caps: wedge not well-defined
        assert!(time_exponent(0.99, 0.99, M3_EXP).is_err());
        // tiny memory: constraint (2) fails before geometry does
        let r = time_exponent(0.347606, 0.427124, 0.01);
        assert_eq!(
            r.unwrap_err().reason,
            InfeasibleReason::ConstraintViolated
        );
    }

    #[test]
    fn table1_rows() {
        let t = table1_report().unwrap();
        assert_eq!(t.rows.len(), 3);
        assert!((t.rows[0].memory - 0.2075).abs() < 5e-5);
        assert!((t.rows[1].memory - 0.1887).abs() < 5e-5);
        assert!((t.rows[2].memory - 0.1724).abs() < 5e-5);
        let q3 = t.rows[1].quantum_time_computed.unwrap();
        assert!((q3 - 0.284551).abs() < 2e-5);
        // headline rounding: 0.2846
        assert!(((q3 * 1e4).round() / 1e4 - 0.2846).abs() < 1e-12);
    }
}
