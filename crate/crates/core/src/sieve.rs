//! Classical emulation of the nested code-filtered triple search, with exact
//! probability bookkeeping and brute-force oracles.
//!
//! The pipeline mirrors the layered search it models:
//!
//! 1. `preprocess` decodes every list point against two codes and stores the
//!    induced relations in two-way keyed stores `D` (angle `a`) and `D'`
//!    (angle `a'`).
//! 2. `r_collision_sample` draws `(x, c, y)` ancestrally: uniform `x`, a
//!    uniform codeword of `R(x)`, then a uniform member of that codeword's
//!    backward bucket; a concrete triple has probability exactly
//!    `1 / (m |R(x)| |R^{-1}(c)|)`, the squared amplitude of the modeled
//!    superposition.
//! 3. `tuple_sample` conditions the draw on the pair band
//!    `|<x,y> - cos t| <= eps` (the idealized first amplification), decodes
//!    the normalized difference against the second code, and fills the z
//!    register from the band-filtered sub-bucket, flagging success.
//! 4. `solution_search` conditions on the flag (the outer amplification) and
//!    returns a member of `T(R,R')`; `three_list` repeats the cycle over
//!    fresh code pairs and keeps band-certified triples.
//!
//! Every conditioned distribution is realized two ways, exact enumeration of
//! the support (desk scale) and rejection sampling (any scale); the two must
//! agree, and the chi-square suites check the emulation against closed-form
//! probabilities recomputed from scratch.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::aasim::{rounds_needed, QueryLedger, Rounds};
use crate::relstore::RelationStore;
use crate::rpc::{CodewordId, RpcDescription, RpcError};
use crate::sphere::{
    cap_band_probability, epsilon_for, normalized_difference, sample_unit_vector,
    wedge_band_probability_raw, SphereError, UnitVector,
};

#[derive(Debug, Error)]
pub enum SieveError {
    #[error("k must be at least 2, got {0}")]
    BadTupleArity(usize),
    #[error("epsilon {0} outside (0, 0.1)")]
    BadEpsilon(f64),
    #[error("enumeration guard exceeded: m = {0} > {1}")]
    SizeGuardExceeded(usize, usize),
    #[error("no pair satisfies the first-level band; search space is empty")]
    EmptySearch,
    #[error("no triple survives both code filters for this code pair")]
    NoSolution,
    #[error("list must contain vectors of dimension {0}")]
    DimensionMismatch(usize),
    #[error(transparent)]
    Rpc(#[from] RpcError),
    #[error(transparent)]
    Sphere(#[from] SphereError),
    #[error(transparent)]
    Store(#[from] crate::relstore::StoreError),
    #[error(transparent)]
    Aa(#[from] crate::aasim::AaError),
}

/// Minimal list size for k-tuple combining: `((k^{k/(k-1)}) / (k+1))^{d/2}`,
/// returned with its per-dimension log2 exponent.
pub fn min_list_size(k: usize, d: usize) -> Result<(f64, f64), SieveError> {
    if k < 2 {
        return Err(SieveError::BadTupleArity(k));
    }
    let kf = k as f64;
    let ratio = kf.powf(kf / (kf - 1.0)) / (kf + 1.0);
    let exponent = 0.5 * ratio.log2();
    Ok((ratio.powf(d as f64 / 2.0), exponent))
}

/// First- and second-level band centers: `cos t = 1/3` and
/// `cos t' = eps + sqrt((1 - cos t + eps)/2) = eps + sqrt(1/3 + eps/2)`.
/// The second band bottom then equals sqrt((1 - <x,y>)/2) at the worst pair,
/// so both bands holding forces `||x - y - z|| <= 1` with no slack to spare.
pub fn choose_theta(epsilon: f64) -> Result<(f64, f64), SieveError> {
    if !(0.0 < epsilon && epsilon < 0.1) {
        return Err(SieveError::BadEpsilon(epsilon));
    }
    Ok((1.0 / 3.0, epsilon + (1.0 / 3.0 + epsilon / 2.0).sqrt()))
}

/// Decode-set truncation cap: `2^{d / log2 d}`, rounded.
pub fn default_truncation_cap(d: usize) -> usize {
    let df = d as f64;
    (2f64.powf(df / df.log2()).round() as usize).max(1)
}

/// All tunables of one emulation instance. `r1`, `r2`, `r3` are recomputed
/// per code draw from the measured good-mass values; see [`SearchContext`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SieveParams {
    pub d: usize,
    pub m: usize,
    pub cos_theta: f64,
    pub cos_theta_prime: f64,
    pub cos_alpha: f64,
    pub cos_alpha_prime: f64,
    pub epsilon: f64,
    pub ell1: usize,
    pub ell2: usize,
    pub r1: u64,
    pub r2: u64,
    pub r3: u64,
    /// per-iteration norm shrink for the lattice application
    pub mu: f64,
    pub code_b: usize,
    pub code_m: usize,
    pub code_m_prime: usize,
    pub t_rotations: usize,
    /// amplification engine accuracy and calibrated constant
    pub delta: f64,
    pub eta: f64,
    /// multiplier standing in for the subexponential round slack
    pub round_slack: f64,
    pub truncation_cap: usize,
    /// largest m for which full enumeration paths are used
    pub enum_guard: usize,
    /// per-dimension log2 tolerance for concentration checks
    pub slack_log2_per_dim: f64,
    /// goodness checks use a separately calibrated slack
    pub goodness_slack_log2_per_dim: f64,
    /// abstract step costs of the modeled subroutines
    pub cost_rcollision_samp: f64,
    pub cost_theta_check: f64,
    pub cost_decode_prime: f64,
    pub cost_z_samp: f64,
    pub cost_z_check: f64,
    pub cost_tuple_check: f64,
}

impl SieveParams {
    /// Defaults for a list of m points in dimension d at the optimal-shape
    /// angles. Code sizes realize "one expected decoded codeword per point"
    /// at finite d: M = round(1 / band probability).
    pub fn for_instance(d: usize, m: usize) -> Result<Self, SieveError> {
        Self::with_angles(d, m, 0.347606, 0.427124)
    }

    pub fn with_angles(
        d: usize,
        m: usize,
        cos_alpha: f64,
        cos_alpha_prime: f64,
    ) -> Result<Self, SieveError> {
        let epsilon = epsilon_for(d)?;
        let (cos_theta, cos_theta_prime) = choose_theta(epsilon)?;
        let p_alpha = cap_band_probability(d, cos_alpha, epsilon)?;
        let p_alpha_prime = cap_band_probability(d, cos_alpha_prime, epsilon)?;
        let code_m = (1.0 / p_alpha).round().max(1.0) as usize;
        let code_m_prime = (1.0 / p_alpha_prime).round().max(1.0) as usize;
        let w_aat = wedge_band_probability_raw(d, cos_alpha, cos_alpha, cos_theta, epsilon)?;
        let w_apaptp = wedge_band_probability_raw(
            d,
            cos_alpha_prime,
            cos_alpha_prime,
            cos_theta_prime,
            epsilon,
        )?;
        let ell1 = ((p_alpha / w_aat) * (p_alpha_prime / w_apaptp))
            .ceil()
            .max(1.0) as usize;
        let ell2 = (m as f64 / ell1 as f64).ceil().max(1.0) as usize;
        Ok(SieveParams {
            d,
            m,
            cos_theta,
            cos_theta_prime,
            cos_alpha,
            cos_alpha_prime,
            epsilon,
            ell1,
            ell2,
            r1: 1,
            r2: 1,
            r3: 1,
            mu: 1.0 / d as f64,
            code_b: crate::rpc::default_block_count(d),
            code_m,
            code_m_prime,
            t_rotations: 1,
            delta: crate::aasim::DEFAULT_DELTA,
            eta: crate::aasim::DEFAULT_ETA,
            round_slack: 1.0,
            truncation_cap: default_truncation_cap(d),
            enum_guard: 2000,
            slack_log2_per_dim: 0.04,
            goodness_slack_log2_per_dim: 0.08,
            cost_rcollision_samp: 1.0,
            cost_theta_check: 1.0,
            cost_decode_prime: 1.0,
            cost_z_samp: 1.0,
            cost_z_check: 1.0,
            cost_tuple_check: 1.0,
        })
    }

    pub fn in_theta_band(&self, ip: f64) -> bool {
        (ip - self.cos_theta).abs() <= self.epsilon
    }

    pub fn in_theta_prime_band(&self, ip: f64) -> bool {
        (ip - self.cos_theta_prime).abs() <= self.epsilon
    }
}

/// One recovered triple with its certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleSolution {
    pub x_id: usize,
    pub y_id: usize,
    pub z_id: usize,
    pub inner_xy: f64,
    pub inner_diff_z: f64,
    pub witness_c: Option<CodewordId>,
    pub witness_c_prime: Option<CodewordId>,
}

/// Band membership of an ordered triple of distinct list indices; returns
/// the two certified inner products when the triple qualifies.
pub fn t_sol_membership(
    list: &[UnitVector],
    x: usize,
    y: usize,
    z: usize,
    params: &SieveParams,
) -> Option<(f64, f64)> {
    if x == y || y == z || x == z {
        return None;
    }
    let ip_xy = list[x].dot(&list[y]);
    if !params.in_theta_band(ip_xy) {
        return None;
    }
    let u = normalized_difference(&list[x], &list[y]).ok()?;
    let ip_uz = u.dot(&list[z]);
    if !params.in_theta_prime_band(ip_uz) {
        return None;
    }
    Some((ip_xy, ip_uz))
}

/// Sample m i.i.d. uniform sphere points.
pub fn sample_uniform_list<R: Rng + ?Sized>(d: usize, m: usize, rng: &mut R) -> Vec<UnitVector> {
    (0..m).map(|_| sample_unit_vector(d, rng)).collect()
}

/// Decode every list point against both codes and freeze the two relation
/// stores. Element ids are list indices; codeword ids are flat code ranks.
pub fn preprocess(
    list: &[UnitVector],
    code: &RpcDescription,
    code_prime: &RpcDescription,
    params: &SieveParams,
) -> Result<(RelationStore, RelationStore), SieveError> {
    let mut d_store = RelationStore::new();
    let mut d_prime = RelationStore::new();
    for (i, x) in list.iter().enumerate() {
        if x.dim() != params.d {
            return Err(SieveError::DimensionMismatch(params.d));
        }
        for id in code.decode(x, params.cos_alpha, params.epsilon)? {
            d_store.insert(i as u64, code.flat_index(&id))?;
        }
        for id in code_prime.decode(x, params.cos_alpha_prime, params.epsilon)? {
            d_prime.insert(i as u64, code_prime.flat_index(&id))?;
        }
    }
    d_store.freeze();
    d_prime.freeze();
    Ok((d_store, d_prime))
}

/// Ancestral draw of `(x, c, y)`: uniform list index, uniform codeword of
/// its forward bucket (bottom branch if empty), uniform member of that
/// codeword's backward bucket.
pub fn r_collision_sample<R: Rng + ?Sized>(
    store: &RelationStore,
    list_len: usize,
    rng: &mut R,
) -> (usize, Option<u64>, Option<usize>) {
    let x = rng.gen_range(0..list_len);
    let bucket = store.lookup_by_x(x as u64);
    if bucket.is_empty() {
        return (x, None, None);
    }
    let c = bucket[rng.gen_range(0..bucket.len())];
    let back = store.lookup_by_c(c);
    let y = back[rng.gen_range(0..back.len())];
    (x, Some(c), Some(y as usize))
}

/// How conditioned distributions are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmulationPath {
    /// exact enumeration of the support (requires m <= enum_guard)
    Enumerate,
    /// rejection sampling against the unconditioned ancestral draw
    Rejection,
}

/// Output of one tuple draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TupleOutcome {
    pub x_id: usize,
    pub c_flat: u64,
    pub y_id: usize,
    pub c_prime_flat: Option<u64>,
    pub z_id: Option<usize>,
    pub flag: bool,
    /// the decode set of the normalized difference exceeded the cap
    pub oversize: bool,
}

/// Per-code-draw derived quantities: the first-level conditioned support,
/// its total mass, the flagged mass, and the round counts they imply.
pub struct SearchContext<'a> {
    pub list: &'a [UnitVector],
    pub store: &'a RelationStore,
    pub store_prime: &'a RelationStore,
    pub code: &'a RpcDescription,
    pub code_prime: &'a RpcDescription,
    pub params: &'a SieveParams,
    pub path: EmulationPath,
    /// (x, c, y, ancestral probability) over pairs in the first band
    m1_support: Vec<(usize, u64, usize, f64)>,
    m1_cumulative: Vec<f64>,
    /// squared norm of the projection onto the first-level band
    pub pi_sq: f64,
    /// squared norm of the flagged component after the z step
    pub pi_prime_sq: f64,
    /// flagged support (x, c, y, c', z, probability); enumerate path only
    flagged_support: Vec<(usize, u64, usize, u64, usize, f64)>,
    flagged_cumulative: Vec<f64>,
    pub r1: u64,
    pub r2: u64,
    pub r3: u64,
    /// some encountered decode set was truncated to the cap
    pub any_oversize: bool,
}

impl<'a> SearchContext<'a> {
    pub fn build(
        list: &'a [UnitVector],
        store: &'a RelationStore,
        store_prime: &'a RelationStore,
        code: &'a RpcDescription,
        code_prime: &'a RpcDescription,
        params: &'a SieveParams,
    ) -> Result<Self, SieveError> {
        let path = if list.len() <= params.enum_guard {
            EmulationPath::Enumerate
        } else {
            EmulationPath::Rejection
        };
        Self::build_with_path(list, store, store_prime, code, code_prime, params, path)
    }

    pub fn build_with_path(
        list: &'a [UnitVector],
        store: &'a RelationStore,
        store_prime: &'a RelationStore,
        code: &'a RpcDescription,
        code_prime: &'a RpcDescription,
        params: &'a SieveParams,
        path: EmulationPath,
    ) -> Result<Self, SieveError> {
        let mut ctx = SearchContext {
            list,
            store,
            store_prime,
            code,
            code_prime,
            params,
            path,
            m1_support: Vec::new(),
            m1_cumulative: Vec::new(),
            pi_sq: 0.0,
            pi_prime_sq: 0.0,
            flagged_support: Vec::new(),
            flagged_cumulative: Vec::new(),
            r1: 1,
            r2: 1,
            r3: 1,
            any_oversize: false,
        };
        match path {
            EmulationPath::Enumerate => {
                if list.len() > params.enum_guard {
                    return Err(SieveError::SizeGuardExceeded(list.len(), params.enum_guard));
                }
                ctx.enumerate_support()?;
            }
            EmulationPath::Rejection => {
                // fixed probe substream: round counts stay a pure function of
                // (store contents, params)
                let mut probe = crate::rng::substream(0xC0DE, "sieve/mass-probe");
                ctx.estimate_masses(&mut probe)?;
            }
        }
        ctx.r1 = ctx.rounds_for(ctx.pi_sq)?;
        let bmax = store_prime.max_backward_bucket().max(1) as f64;
        ctx.r2 = ctx.rounds_for(1.0 / bmax)?;
        ctx.r3 = ctx.rounds_for(ctx.pi_prime_sq)?;
        Ok(ctx)
    }

    fn rounds_for(&self, good_mass: f64) -> Result<u64, SieveError> {
        match rounds_needed(good_mass.min(1.0), self.params.delta, self.params.eta)? {
            Rounds::Finite(r) => Ok(((r as f64 * self.params.round_slack).ceil() as u64).max(1)),
            Rounds::Unbounded => Ok(1),
        }
    }

    /// Band-filtered z sub-bucket for a pair and second-level codeword,
    /// excluding the pair itself.
    fn z_sub_bucket(&self, x: usize, y: usize, u: &UnitVector, c_prime: u64) -> Vec<usize> {
        self.store_prime
            .lookup_by_c(c_prime)
            .iter()
            .map(|&z| z as usize)
            .filter(|&z| z != x && z != y && self.params.in_theta_prime_band(u.dot(&self.list[z])))
            .collect()
    }

    /// Decode the normalized difference against the second code, truncating
    /// to the cap in lexicographic order.
    fn decode_diff(&self, u: &UnitVector) -> Result<(Vec<u64>, bool), SieveError> {
        let ids = self
            .code_prime
            .decode(u, self.params.cos_alpha_prime, self.params.epsilon)?;
        let oversize = ids.len() > self.params.truncation_cap;
        let kept = ids
            .iter()
            .take(self.params.truncation_cap)
            .map(|id| self.code_prime.flat_index(id))
            .collect();
        Ok((kept, oversize))
    }

    fn enumerate_support(&mut self) -> Result<(), SieveError> {
        let m = self.list.len() as f64;
        for x in 0..self.list.len() {
            let fwd = self.store.lookup_by_x(x as u64);
            if fwd.is_empty() {
                continue;
            }
            for &c in fwd {
                let back = self.store.lookup_by_c(c);
                for &y in back {
                    let y = y as usize;
                    if y == x {
                        continue;
                    }
                    if !self.params.in_theta_band(self.list[x].dot(&self.list[y])) {
                        continue;
                    }
                    let p = 1.0 / (m * fwd.len() as f64 * back.len() as f64);
                    self.m1_support.push((x, c, y, p));
                }
            }
        }
        self.pi_sq = self.m1_support.iter().map(|&(_, _, _, p)| p).sum();
        let mut acc = 0.0;
        self.m1_cumulative = self
            .m1_support
            .iter()
            .map(|&(_, _, _, p)| {
                acc += p;
                acc
            })
            .collect();
        if self.pi_sq == 0.0 {
            return Ok(());
        }
        // extend each first-level member by (c', z); collect the flagged mass
        for &(x, c, y, p) in &self.m1_support {
            let u = normalized_difference(&self.list[x], &self.list[y])?;
            let (dec, oversize) = self.decode_diff(&u)?;
            self.any_oversize |= oversize;
            if dec.is_empty() {
                continue;
            }
            let step1 = p / self.pi_sq;
            for &cp in &dec {
                let sub = self.z_sub_bucket(x, y, &u, cp);
                if sub.is_empty() {
                    continue;
                }
                for &z in &sub {
                    let prob = step1 / dec.len() as f64 / sub.len() as f64;
                    self.flagged_support.push((x, c, y, cp, z, prob));
                }
            }
        }
        self.pi_prime_sq = self.flagged_support.iter().map(|&(.., p)| p).sum();
        let mut acc = 0.0;
        self.flagged_cumulative = self
            .flagged_support
            .iter()
            .map(|&(.., p)| {
                acc += p;
                acc
            })
            .collect();
        Ok(())
    }

    /// Rejection-scale estimates of the two good masses from fixed-size
    /// probes of the unconditioned samplers.
    fn estimate_masses<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(), SieveError> {
        const PROBE: usize = 20_000;
        const TUPLE_PROBE: usize = 2_000;
        let mut hit_m1 = 0usize;
        let mut hit_flag = 0usize;
        let mut tuple_probes = 0usize;
        for _ in 0..PROBE {
            let (x, _c, y) = r_collision_sample(self.store, self.list.len(), rng);
            let Some(y) = y else { continue };
            if y == x || !self.params.in_theta_band(self.list[x].dot(&self.list[y])) {
                continue;
            }
            hit_m1 += 1;
            if tuple_probes < TUPLE_PROBE {
                tuple_probes += 1;
                let u = normalized_difference(&self.list[x], &self.list[y])?;
                let (dec, oversize) = self.decode_diff(&u)?;
                self.any_oversize |= oversize;
                if dec.is_empty() {
                    continue;
                }
                let cp = dec[rng.gen_range(0..dec.len())];
                if !self.z_sub_bucket(x, y, &u, cp).is_empty() {
                    hit_flag += 1;
                }
            }
        }
        self.pi_sq = hit_m1 as f64 / PROBE as f64;
        self.pi_prime_sq = if tuple_probes == 0 {
            0.0
        } else {
            hit_flag as f64 / tuple_probes as f64
        };
        Ok(())
    }

    fn sample_m1<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(usize, u64, usize), SieveError> {
        match self.path {
            EmulationPath::Enumerate => {
                if self.pi_sq == 0.0 {
                    return Err(SieveError::EmptySearch);
                }
                let t = rng.gen_range(0.0..self.pi_sq);
                let idx = self
                    .m1_cumulative
                    .partition_point(|&acc| acc <= t)
                    .min(self.m1_support.len() - 1);
                let (x, c, y, _) = self.m1_support[idx];
                Ok((x, c, y))
            }
            EmulationPath::Rejection => {
                for _ in 0..50_000_000u64 {
                    let (x, c, y) = r_collision_sample(self.store, self.list.len(), rng);
                    let (Some(c), Some(y)) = (c, y) else { continue };
                    if y != x && self.params.in_theta_band(self.list[x].dot(&self.list[y])) {
                        return Ok((x, c, y));
                    }
                }
                Err(SieveError::EmptySearch)
            }
        }
    }
}

/// One draw of the tuple register: first-level conditioned pair, second-level
/// codeword, band-filtered z, and the success flag. Charges
/// `r1 (S + C1) + S2 + r2 (S3 + C3)` to the ledger.
pub fn tuple_sample<R: Rng + ?Sized>(
    ctx: &SearchContext,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> Result<TupleOutcome, SieveError> {
    let p = ctx.params;
    ledger.charge(ctx.r1, p.cost_rcollision_samp, p.cost_theta_check);
    ledger.charge_flat(p.cost_decode_prime);
    ledger.charge(ctx.r2, p.cost_z_samp, p.cost_z_check);
    if ctx.pi_sq == 0.0 {
        return Err(SieveError::EmptySearch);
    }
    let (x, c, y) = ctx.sample_m1(rng)?;
    let u = normalized_difference(&ctx.list[x], &ctx.list[y])?;
    let (dec, oversize) = ctx.decode_diff(&u)?;
    if dec.is_empty() {
        return Ok(TupleOutcome {
            x_id: x,
            c_flat: c,
            y_id: y,
            c_prime_flat: None,
            z_id: None,
            flag: false,
            oversize,
        });
    }
    let cp = dec[rng.gen_range(0..dec.len())];
    let sub = ctx.z_sub_bucket(x, y, &u, cp);
    if sub.is_empty() {
        return Ok(TupleOutcome {
            x_id: x,
            c_flat: c,
            y_id: y,
            c_prime_flat: Some(cp),
            z_id: None,
            flag: false,
            oversize,
        });
    }
    let z = sub[rng.gen_range(0..sub.len())];
    Ok(TupleOutcome {
        x_id: x,
        c_flat: c,
        y_id: y,
        c_prime_flat: Some(cp),
        z_id: Some(z),
        flag: true,
        oversize,
    })
}

/// The symbolic cost of one tuple draw, the sampler the outer amplification
/// repeats: `r1 (S + C1) + S2 + r2 (S3 + C3)`.
pub fn tuple_cost(ctx: &SearchContext) -> f64 {
    let p = ctx.params;
    ctx.r1 as f64 * (p.cost_rcollision_samp + p.cost_theta_check)
        + p.cost_decode_prime
        + ctx.r2 as f64 * (p.cost_z_samp + p.cost_z_check)
}

/// Draw one member of `T(R,R')` by conditioning the tuple register on the
/// flag. Charges `r3 (tuple_cost + C)` to the ledger.
pub fn solution_search<R: Rng + ?Sized>(
    ctx: &SearchContext,
    rng: &mut R,
    ledger: &mut QueryLedger,
) -> Result<TripleSolution, SieveError> {
    let p = ctx.params;
    ledger.charge(ctx.r3, tuple_cost(ctx), p.cost_tuple_check);
    if ctx.pi_sq == 0.0 {
        return Err(SieveError::EmptySearch);
    }
    let (x, c, y, cp, z) = match ctx.path {
        EmulationPath::Enumerate => {
            if ctx.pi_prime_sq == 0.0 {
                return Err(SieveError::NoSolution);
            }
            let t = rng.gen_range(0.0..ctx.pi_prime_sq);
            let idx = ctx
                .flagged_cumulative
                .partition_point(|&acc| acc <= t)
                .min(ctx.flagged_support.len() - 1);
            let (x, c, y, cp, z, _) = ctx.flagged_support[idx];
            (x, c, y, cp, z)
        }
        EmulationPath::Rejection => {
            let mut found = None;
            let mut scratch = QueryLedger::new();
            for _ in 0..5_000_000u64 {
                let out = tuple_sample(ctx, rng, &mut scratch)?;
                if out.flag {
                    found = Some((
                        out.x_id,
                        out.c_flat,
                        out.y_id,
                        out.c_prime_flat.expect("flagged"),
                        out.z_id.expect("flagged"),
                    ));
                    break;
                }
            }
            found.ok_or(SieveError::NoSolution)?
        }
    };
    let u = normalized_difference(&ctx.list[x], &ctx.list[y])?;
    Ok(TripleSolution {
        x_id: x,
        y_id: y,
        z_id: z,
        inner_xy: ctx.list[x].dot(&ctx.list[y]),
        inner_diff_z: u.dot(&ctx.list[z]),
        witness_c: Some(ctx.code.unflatten(c)),
        witness_c_prime: Some(ctx.code_prime.unflatten(cp)),
    })
}

/// Exhaustive band-set enumeration over distinct ordered triples, in
/// canonical (x, y, z) order. Guarded by `enum_guard`.
pub fn enumerate_t_sol(
    list: &[UnitVector],
    params: &SieveParams,
) -> Result<Vec<TripleSolution>, SieveError> {
    if list.len() > params.enum_guard {
        return Err(SieveError::SizeGuardExceeded(list.len(), params.enum_guard));
    }
    let mut out = Vec::new();
    for x in 0..list.len() {
        for y in 0..list.len() {
            if y == x {
                continue;
            }
            let ip_xy = list[x].dot(&list[y]);
            if !params.in_theta_band(ip_xy) {
                continue;
            }
            let u = normalized_difference(&list[x], &list[y])?;
            for z in 0..list.len() {
                if z == x || z == y {
                    continue;
                }
                let ip_uz = u.dot(&list[z]);
                if params.in_theta_prime_band(ip_uz) {
                    out.push(TripleSolution {
                        x_id: x,
                        y_id: y,
                        z_id: z,
                        inner_xy: ip_xy,
                        inner_diff_z: ip_uz,
                        witness_c: None,
                        witness_c_prime: None,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// The band triples that additionally survive both code filters, with
/// witnessing codewords attached.
pub fn enumerate_t_rr_prime(
    list: &[UnitVector],
    code: &RpcDescription,
    code_prime: &RpcDescription,
    params: &SieveParams,
) -> Result<Vec<TripleSolution>, SieveError> {
    let t_sol = enumerate_t_sol(list, params)?;
    // decode sets of the list points, computed once
    let dec: Vec<Vec<u64>> = list
        .iter()
        .map(|x| {
            code.decode(x, params.cos_alpha, params.epsilon)
                .map(|ids| ids.iter().map(|id| code.flat_index(id)).collect())
        })
        .collect::<Result<_, _>>()?;
    let dec_prime: Vec<Vec<u64>> = list
        .iter()
        .map(|x| {
            code_prime
                .decode(x, params.cos_alpha_prime, params.epsilon)
                .map(|ids| ids.iter().map(|id| code_prime.flat_index(id)).collect())
        })
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for mut t in t_sol {
        let Some(&c) = dec[t.x_id].iter().find(|c| dec[t.y_id].contains(c)) else {
            continue;
        };
        let u = normalized_difference(&list[t.x_id], &list[t.y_id])?;
        let du = code_prime.decode(&u, params.cos_alpha_prime, params.epsilon)?;
        let du: Vec<u64> = du.iter().map(|id| code_prime.flat_index(id)).collect();
        let Some(&cp) = du.iter().find(|c| dec_prime[t.z_id].contains(c)) else {
            continue;
        };
        t.witness_c = Some(code.unflatten(c));
        t.witness_c_prime = Some(code_prime.unflatten(cp));
        out.push(t);
    }
    Ok(out)
}

/// Per-iteration record of a `three_list` run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub relation_pairs: usize,
    pub relation_pairs_prime: usize,
    pub pi_sq: f64,
    pub pi_prime_sq: f64,
    pub r1: u64,
    pub r2: u64,
    pub r3: u64,
    pub searches_run: usize,
    pub triples_kept: usize,
    pub skipped_empty: bool,
    pub any_oversize: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThreeListReport {
    pub triples: Vec<TripleSolution>,
    pub iterations: Vec<IterationStats>,
    pub ledger: QueryLedger,
    pub distinct_triples: usize,
}

/// The outer loop: `ell1` fresh code pairs, preprocessing, then `ell2`
/// searches per pair, keeping deduplicated band-certified triples. Code
/// pairs whose filtered triple set is empty are skipped (recorded, not
/// searched).
pub fn three_list<R: Rng + ?Sized>(
    list: &[UnitVector],
    params: &SieveParams,
    rng: &mut R,
) -> Result<ThreeListReport, SieveError> {
    let mut seen: BTreeMap<(usize, usize, usize), TripleSolution> = BTreeMap::new();
    let mut iterations = Vec::new();
    let mut ledger = QueryLedger::new();
    for iteration in 0..params.ell1 {
        let code = crate::rpc::sample_rpc(
            params.d,
            params.code_b,
            params.code_m,
            params.t_rotations,
            rng,
        )?;
        let code_prime = crate::rpc::sample_rpc(
            params.d,
            params.code_b,
            params.code_m_prime,
            params.t_rotations,
            rng,
        )?;
        let (store, store_prime) = preprocess(list, &code, &code_prime, params)?;
        let ctx = SearchContext::build(list, &store, &store_prime, &code, &code_prime, params)?;
        let mut stats = IterationStats {
            iteration,
            relation_pairs: store.len(),
            relation_pairs_prime: store_prime.len(),
            pi_sq: ctx.pi_sq,
            pi_prime_sq: ctx.pi_prime_sq,
            r1: ctx.r1,
            r2: ctx.r2,
            r3: ctx.r3,
            searches_run: 0,
            triples_kept: 0,
            skipped_empty: false,
            any_oversize: ctx.any_oversize,
        };
        if ctx.pi_prime_sq == 0.0 {
            // nothing survives both filters for this code pair
            stats.skipped_empty = true;
            iterations.push(stats);
            continue;
        }
        for _ in 0..params.ell2 {
            stats.searches_run += 1;
            match solution_search(&ctx, rng, &mut ledger) {
                Ok(sol) => {
                    if t_sol_membership(list, sol.x_id, sol.y_id, sol.z_id, params).is_some() {
                        stats.triples_kept += 1;
                        seen.entry((sol.x_id, sol.y_id, sol.z_id)).or_insert(sol);
                    }
                }
                Err(SieveError::NoSolution) | Err(SieveError::EmptySearch) => break,
                Err(e) => return Err(e),
            }
        }
        iterations.push(stats);
    }
    let triples: Vec<TripleSolution> = seen.into_values().collect();
    Ok(ThreeListReport {
        distinct_triples: triples.len(),
        triples,
        iterations,
        ledger,
    })
}

/// Measured-versus-predicted record for one concentration condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoodnessCondition {
    pub pass: bool,
    pub measured_min: f64,
    pub measured_max: f64,
    pub predicted: f64,
    /// allowed multiplicative band around the prediction
    pub band_low: f64,
    pub band_high: f64,
}

/// Pass/fail per condition of the concentration definition, with measured
/// ratios. Predictions are the finite-d quadrature renderings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoodnessReport {
    /// (i) backward buckets of both stores concentrate around m * p_band
    pub bucket_concentration: GoodnessCondition,
    /// (ii) z-candidates per pair bounded by max(1, m w(t',a'|a')) (one-sided)
    pub z_count: GoodnessCondition,
    /// (iii) first-band collision-pair count near its prediction
    pub m1_size: GoodnessCondition,
    /// (iv) filtered triple count near its prediction
    pub t_size: GoodnessCondition,
    pub all_good: bool,
    pub slack_log2_per_dim: f64,
}

/// Evaluate the four concentration conditions for one (list, code, code')
/// draw, with the multiplicative slack band `2^{+-slack d}`.
pub fn goodness_check(
    list: &[UnitVector],
    code: &RpcDescription,
    code_prime: &RpcDescription,
    params: &SieveParams,
) -> Result<GoodnessReport, SieveError> {
    let m = list.len();
    let d = params.d;
    let slack = params.goodness_slack_log2_per_dim;
    let band = 2f64.powf(slack * d as f64);
    let (store, store_prime) = preprocess(list, code, code_prime, params)?;

    let p_alpha = cap_band_probability(d, params.cos_alpha, params.epsilon)?;
    let p_alpha_prime = cap_band_probability(d, params.cos_alpha_prime, params.epsilon)?;
    let p_theta = cap_band_probability(d, params.cos_theta, params.epsilon)?;
    let p_theta_prime = cap_band_probability(d, params.cos_theta_prime, params.epsilon)?;
    let w_aat = wedge_band_probability_raw(
        d,
        params.cos_alpha,
        params.cos_alpha,
        params.cos_theta,
        params.epsilon,
    )?;
    let w_apaptp = wedge_band_probability_raw(
        d,
        params.cos_alpha_prime,
        params.cos_alpha_prime,
        params.cos_theta_prime,
        params.epsilon,
    )?;

    // (i): all backward buckets of both stores, empty ones included
    let mut ratio_min = f64::INFINITY;
    let mut ratio_max: f64 = 0.0;
    for (the_code, the_store, p_band) in [
        (code, &store, p_alpha),
        (code_prime, &store_prime, p_alpha_prime),
    ] {
        let predicted = m as f64 * p_band;
        for flat in 0..the_code.total_codewords() as u64 {
            let ratio = the_store.lookup_by_c(flat).len() as f64 / predicted;
            ratio_min = ratio_min.min(ratio);
            ratio_max = ratio_max.max(ratio);
        }
    }
    let bucket_concentration = GoodnessCondition {
        pass: ratio_min >= 1.0 / band && ratio_max <= band,
        measured_min: ratio_min,
        measured_max: ratio_max,
        predicted: 1.0,
        band_low: 1.0 / band,
        band_high: band,
    };

    // (ii): z-candidates with a shared second-level codeword, for all pairs
    let cap = (m as f64 * w_apaptp).max(1.0) * band;
    let dec_prime: Vec<Vec<u64>> = list
        .iter()
        .map(|x| {
            code_prime
                .decode(x, params.cos_alpha_prime, params.epsilon)
                .map(|ids| ids.iter().map(|id| code_prime.flat_index(id)).collect())
        })
        .collect::<Result<_, _>>()?;
    let mut worst_z = 0usize;
    for x in 0..m {
        for y in 0..m {
            if x == y {
                continue;
            }
            let u = normalized_difference(&list[x], &list[y])?;
            let du = code_prime.decode(&u, params.cos_alpha_prime, params.epsilon)?;
            if du.is_empty() {
                continue;
            }
            let du: Vec<u64> = du.iter().map(|id| code_prime.flat_index(id)).collect();
            let count = (0..m)
                .filter(|&z| {
                    z != x
                        && z != y
                        && params.in_theta_prime_band(u.dot(&list[z]))
                        && du.iter().any(|c| dec_prime[z].contains(c))
                })
                .count();
            worst_z = worst_z.max(count);
        }
    }
    let z_count = GoodnessCondition {
        pass: (worst_z as f64) <= cap,
        measured_min: worst_z as f64,
        measured_max: worst_z as f64,
        predicted: (m as f64 * w_apaptp).max(1.0),
        band_low: 0.0,
        band_high: cap,
    };

    // (iii): |M1| against m^2 p_theta min(1, M w(a,a|t))
    let mut m1 = 0usize;
    let dec: Vec<Vec<u64>> = list
        .iter()
        .map(|x| {
            code.decode(x, params.cos_alpha, params.epsilon)
                .map(|ids| ids.iter().map(|id| code.flat_index(id)).collect())
        })
        .collect::<Result<_, _>>()?;
    for x in 0..m {
        for y in 0..m {
            if x == y || !params.in_theta_band(list[x].dot(&list[y])) {
                continue;
            }
            if dec[x].iter().any(|c| dec[y].contains(c)) {
                m1 += 1;
            }
        }
    }
    let coll1 = (code.total_codewords() as f64 * w_aat).min(1.0);
    let pred_m1 = (m * m) as f64 * p_theta * coll1;
    let ratio_m1 = m1 as f64 / pred_m1;
    let m1_size = GoodnessCondition {
        pass: ratio_m1 >= 1.0 / band && ratio_m1 <= band,
        measured_min: ratio_m1,
        measured_max: ratio_m1,
        predicted: pred_m1,
        band_low: 1.0 / band,
        band_high: band,
    };

    // (iv): |T(R,R')| against m^3 p_t p_t' min(1, M w) min(1, M' w')
    let t_filtered = enumerate_t_rr_prime(list, code, code_prime, params)?.len();
    let coll2 = (code_prime.total_codewords() as f64 * w_apaptp).min(1.0);
    let pred_t = (m * m * m) as f64 * p_theta * p_theta_prime * coll1 * coll2;
    let ratio_t = t_filtered as f64 / pred_t;
    let t_size = GoodnessCondition {
        pass: ratio_t >= 1.0 / band && ratio_t <= band,
        measured_min: ratio_t,
        measured_max: ratio_t,
        predicted: pred_t,
        band_low: 1.0 / band,
        band_high: band,
    };

    let all_good =
        bucket_concentration.pass && z_count.pass && m1_size.pass && t_size.pass;
    Ok(GoodnessReport {
        bucket_concentration,
        z_count,
        m1_size,
        t_size,
        all_good,
        slack_log2_per_dim: slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::rpc::sample_rpc;

    #[test]
    fn min_list_size_table_exponents() {
        let (_, e2) = min_list_size(2, 10).unwrap();
        let (_, e3) = min_list_size(3, 10).unwrap();
        let (_, e4) = min_list_size(4, 10).unwrap();
        assert!((e2 - 0.2075).abs() < 5e-5, "k=2: {e2}");
        assert!((e3 - 0.1887).abs() < 5e-5, "k=3: {e3}");
        assert!((e4 - 0.1724).abs() < 5e-5, "k=4: {e4}");
        assert!((e2 - 0.20752).abs() < 1e-5);
        assert!((e3 - 0.188722).abs() < 1e-6);
        assert!(min_list_size(1, 10).is_err());
    }

    #[test]
    fn min_list_size_value_matches_exponent() {
        let (v, e) = min_list_size(3, 20).unwrap();
        assert!((v.log2() - 20.0 * e).abs() < 1e-9);
    }

    #[test]
    fn choose_theta_limits_and_arithmetic() {
        let (ct, ctp) = choose_theta(1e-9).unwrap();
        assert!((ct - 1.0 / 3.0).abs() < 1e-15);
        assert!((ctp - 1.0 / 3.0f64.sqrt()).abs() < 1e-8, "eps->0 limit is 1/sqrt(3)");
        let (_, ctp2) = choose_theta(0.04).unwrap();
        assert!((ctp2 - (0.04 + (1.0f64 / 3.0 + 0.02).sqrt())).abs() < 1e-15);
        assert!(choose_theta(0.0).is_err());
        assert!(choose_theta(0.2).is_err());
    }

    #[test]
    fn satisfying_triples_have_short_combination() {
        // construct band triples directly and verify ||x - y - z|| <= 1
        let d = 16;
        let mut rng = substream(51, "sieve/norm-identity");
        let params = SieveParams::for_instance(d, 8).unwrap();
        let mut checked = 0;
        while checked < 1000 {
            // x random; y at exact angle in the theta band; z in the t' band of u
            let x = sample_unit_vector(d, &mut rng);
            let ip_xy = params.cos_theta + params.epsilon * (rng.gen_range(-1.0..1.0));
            let y = point_at_angle(&x, ip_xy, &mut rng);
            let u = normalized_difference(&x, &y).unwrap();
            let ip_uz = params.cos_theta_prime + params.epsilon * (rng.gen_range(-1.0..1.0));
            let z = point_at_angle(&u, ip_uz, &mut rng);
            let list = vec![x, y, z];
            if t_sol_membership(&list, 0, 1, 2, &params).is_none() {
                continue; // rounding pushed it out of the band; resample
            }
            let mut diff = vec![0.0; d];
            for i in 0..d {
                diff[i] = list[0].coords()[i] - list[1].coords()[i] - list[2].coords()[i];
            }
            let norm = crate::sphere::norm(&diff);
            assert!(norm <= 1.0 + 1e-10, "||x-y-z|| = {norm}");
            checked += 1;
        }
    }

    /// A uniform point with prescribed inner product against `anchor`.
    fn point_at_angle<R: Rng + ?Sized>(
        anchor: &UnitVector,
        ip: f64,
        rng: &mut R,
    ) -> UnitVector {
        let d = anchor.dim();
        loop {
            let g = sample_unit_vector(d, rng);
            let proj = g.dot(anchor);
            let mut perp: Vec<f64> = g
                .coords()
                .iter()
                .zip(anchor.coords())
                .map(|(gi, ai)| gi - proj * ai)
                .collect();
            let n = crate::sphere::norm(&perp);
            if n < 1e-9 {
                continue;
            }
            let s = (1.0 - ip * ip).sqrt() / n;
            for (p, a) in perp.iter_mut().zip(anchor.coords()) {
                *p = *p * s + ip * a;
            }
            if let Ok(u) = UnitVector::from_unnormalized(perp) {
                return u;
            }
        }
    }

    #[test]
    fn preprocess_counting_identity() {
        let d = 12;
        let m = 96;
        let mut rng = substream(52, "sieve/preprocess");
        let params = SieveParams::for_instance(d, m).unwrap();
        let list = sample_uniform_list(d, m, &mut rng);
        let code = sample_rpc(d, params.code_b, params.code_m, 1, &mut rng).unwrap();
        let code_prime = sample_rpc(d, params.code_b, params.code_m_prime, 1, &mut rng).unwrap();
        let (store, store_prime) = preprocess(&list, &code, &code_prime, &params).unwrap();
        assert!(store.is_frozen() && store_prime.is_frozen());
        // |R_L| equals the sum of decode-set sizes
        let total: usize = list
            .iter()
            .map(|x| code.decode(x, params.cos_alpha, params.epsilon).unwrap().len())
            .sum();
        assert_eq!(store.len(), total);
        // empty list gives empty stores
        let (e1, e2) = preprocess(&[], &code, &code_prime, &params).unwrap();
        assert!(e1.is_empty() && e2.is_empty());
    }

    #[test]
    fn bucket_concentration_against_quadrature() {
        // backward bucket totals across codewords track |C| m p_band
        let d = 16;
        let m = 512;
        let mut rng = substream(53, "sieve/bucket-conc");
        let params = SieveParams::for_instance(d, m).unwrap();
        let list = sample_uniform_list(d, m, &mut rng);
        let code = sample_rpc(d, params.code_b, params.code_m, 1, &mut rng).unwrap();
        let code_prime = sample_rpc(d, params.code_b, params.code_m_prime, 1, &mut rng).unwrap();
        let (store, _) = preprocess(&list, &code, &code_prime, &params).unwrap();
        let p_band = cap_band_probability(d, params.cos_alpha, params.epsilon).unwrap();
        let predicted = code.total_codewords() as f64 * m as f64 * p_band;
        let ratio = store.len() as f64 / predicted;
        let band = 2f64.powf(params.slack_log2_per_dim * d as f64);
        assert!(
            ratio >= 1.0 / band && ratio <= band,
            "total relation size off: ratio {ratio}"
        );
    }

    #[test]
    fn r_collision_distribution_matches_closed_form() {
        // toy relation: exact ancestral probabilities vs 1e6 draws
        let d = 10;
        let m = 32;
        let mut rng = substream(54, "sieve/rcoll-chi");
        let params = SieveParams {
            enum_guard: 2000,
            ..SieveParams::for_instance(d, m).unwrap()
        };
        let list = sample_uniform_list(d, m, &mut rng);
        let code = sample_rpc(d, 2, 16, 1, &mut rng).unwrap();
        let code_prime = sample_rpc(d, 2, 16, 1, &mut rng).unwrap();
        let (store, _sp) = preprocess(&list, &code, &code_prime, &params).unwrap();
        // closed form over full outcomes (x, c, y) plus the bottom branch per x
        let mut expected: BTreeMap<(usize, Option<u64>, Option<usize>), f64> = BTreeMap::new();
        for x in 0..m {
            let fwd = store.lookup_by_x(x as u64);
            if fwd.is_empty() {
                expected.insert((x, None, None), 1.0 / m as f64);
                continue;
            }
            for &c in fwd {
                let back = store.lookup_by_c(c);
                for &y in back {
                    let p = 1.0 / (m as f64 * fwd.len() as f64 * back.len() as f64);
                    *expected.entry((x, Some(c), Some(y as usize))).or_insert(0.0) += p;
                }
            }
        }
        let n = 1_000_000u64;
        let mut counts: BTreeMap<(usize, Option<u64>, Option<usize>), u64> = BTreeMap::new();
        for _ in 0..n {
            let (x, c, y) = r_collision_sample(&store, m, &mut rng);
            *counts.entry((x, c, y)).or_insert(0) += 1;
        }
        let keys: Vec<_> = expected.keys().cloned().collect();
        let obs: Vec<u64> = keys.iter().map(|k| counts.get(k).copied().unwrap_or(0)).collect();
        let exp: Vec<f64> = keys.iter().map(|k| expected[k] * n as f64).collect();
        let stray: u64 = counts.iter().filter(|(k, _)| !expected.contains_key(k)).map(|(_, &v)| v).sum();
        assert_eq!(stray, 0, "sampler produced an outcome with zero probability");
        let sum: f64 = expected.values().sum();
        assert!((sum - 1.0).abs() < 1e-9, "closed form must be a distribution");
        let r = crate::stats::chi_square_test(&obs, &exp, 5.0);
        assert!(r.p_value > 1e-4, "chi-square p = {} (stat {})", r.p_value, r.statistic);
    }

    #[test]
    fn singleton_relation_is_deterministic() {
        let d = 10;
        let mut rng = substream(55, "sieve/singleton");
        let params = SieveParams::for_instance(d, 1).unwrap();
        let list = sample_uniform_list(d, 1, &mut rng);
        let mut store = RelationStore::new();
        store.insert(0, 7).unwrap();
        store.freeze();
        for _ in 0..50 {
            let (x, c, y) = r_collision_sample(&store, 1, &mut rng);
            assert_eq!((x, c, y), (0, Some(7), Some(0)));
        }
        let _ = params;
    }

    #[test]
    fn empty_bucket_takes_bottom_branch() {
        let mut rng = substream(56, "sieve/bottom");
        let mut store = RelationStore::new();
        store.insert(1, 4).unwrap(); // x = 0 has no codewords
        store.freeze();
        for _ in 0..200 {
            let (x, c, y) = r_collision_sample(&store, 2, &mut rng);
            if x == 0 {
                assert_eq!((c, y), (None, None));
                return;
            }
        }
        panic!("never sampled the empty-bucket element");
    }

    #[test]
    fn enumerate_t_sol_edges() {
        let d = 10;
        let params = SieveParams {
            enum_guard: 10,
            ..SieveParams::for_instance(d, 3).unwrap()
        };
        // orthogonal basis vectors: all inner products 0, outside the band
        let list: Vec<UnitVector> = (0..3).map(|i| UnitVector::basis(d, i)).collect();
        assert!(enumerate_t_sol(&list, &params).unwrap().is_empty());
        // planted triple is recovered
        let mut rng = substream(57, "sieve/planted");
        let x = sample_unit_vector(d, &mut rng);
        let y = point_at_angle(&x, params.cos_theta, &mut rng);
        let u = normalized_difference(&x, &y).unwrap();
        let z = point_at_angle(&u, params.cos_theta_prime, &mut rng);
        let planted = vec![x, y, z];
        let found = enumerate_t_sol(&planted, &params).unwrap();
        assert!(
            found.iter().any(|t| (t.x_id, t.y_id, t.z_id) == (0, 1, 2)),
            "planted triple missing"
        );
        // guard trips
        let big = SieveParams {
            enum_guard: 2,
            ..params.clone()
        };
        assert!(matches!(
            enumerate_t_sol(&planted, &big),
            Err(SieveError::SizeGuardExceeded(3, 2))
        ));
    }

    #[test]
    fn filtered_triples_are_a_subset_with_witnesses() {
        let d = 12;
        let m = 64;
        let mut rng = substream(58, "sieve/subset");
        let params = SieveParams::for_instance(d, m).unwrap();
        let list = sample_uniform_list(d, m, &mut rng);
        let code = sample_rpc(d, params.code_b, params.code_m, 1, &mut rng).unwrap();
        let code_prime = sample_rpc(d, params.code_b, params.code_m_prime, 1, &mut rng).unwrap();
        let t_sol = enumerate_t_sol(&list, &params).unwrap();
        let t_f = enumerate_t_rr_prime(&list, &code, &code_prime, &params).unwrap();
        let keys: std::collections::BTreeSet<_> =
            t_sol.iter().map(|t| (t.x_id, t.y_id, t.z_id)).collect();
        for t in &t_f {
            assert!(keys.contains(&(t.x_id, t.y_id, t.z_id)), "subset violated");
            let c = t.witness_c.as_ref().expect("witness");
            let cp = t.witness_c_prime.as_ref().expect("witness");
            // witnesses certify: c close to x and y, c' close to diff and z
            let vc = code.codeword_vector(c).unwrap();
            assert!((vc.dot(&list[t.x_id]) - params.cos_alpha).abs() <= params.epsilon);
            assert!((vc.dot(&list[t.y_id]) - params.cos_alpha).abs() <= params.epsilon);
            let u = normalized_difference(&list[t.x_id], &list[t.y_id]).unwrap();
            let vcp = code_prime.codeword_vector(cp).unwrap();
            assert!((vcp.dot(&u) - params.cos_alpha_prime).abs() <= params.epsilon);
            assert!((vcp.dot(&list[t.z_id]) - params.cos_alpha_prime).abs() <= params.epsilon);
        }
        // all-covering second code (huge per-point decode sets) keeps every
        // triple whose pair shares a first-level codeword; with an
        // all-covering first code too, the filtered set equals the band set
        let cover = SieveParams {
            epsilon: 2.0,
            ..params.clone()
        };
        // decoding with eps = 2 keeps all codewords, so every triple collides
        let t_all = enumerate_t_rr_prime(&list, &code, &code_prime, &cover).unwrap();
        let t_sol_all = enumerate_t_sol(&list, &cover).unwrap();
        assert_eq!(t_all.len(), t_sol_all.len());
    }

    #[test]
    fn tuple_and_search_agree_across_paths() {
        // enumerate and rejection paths draw from the same distribution;
        // compare flagged frequencies coarsely on a small instance
        let d = 10;
        let m = 48;
        let mut rng = substream(59, "sieve/paths");
        let params = SieveParams::for_instance(d, m).unwrap();
        let list = sample_uniform_list(d, m, &mut rng);
        let code = sample_rpc(d, params.code_b, params.code_m, 1, &mut rng).unwrap();
        let code_prime = sample_rpc(d, params.code_b, params.code_m_prime, 1, &mut rng).unwrap();
        let (store, store_prime) = preprocess(&list, &code, &code_prime, &params).unwrap();
        let ctx_e = SearchContext::build_with_path(
            &list, &store, &store_prime, &code, &code_prime, &params,
            EmulationPath::Enumerate,
        )
        .unwrap();
        let ctx_r = SearchContext::build_with_path(
            &list, &store, &store_prime, &code, &code_prime, &params,
            EmulationPath::Rejection,
        )
        .unwrap();
        if ctx_e.pi_prime_sq == 0.0 {
            return; // nothing to compare on this draw
        }
        let mut ledger = QueryLedger::new();
        let n = 20_000;
        let mut flags_e = 0;
        let mut flags_r = 0;
        for _ in 0..n {
            if tuple_sample(&ctx_e, &mut rng, &mut ledger).unwrap().flag {
                flags_e += 1;
            }
            if tuple_sample(&ctx_r, &mut rng, &mut ledger).unwrap().flag {
                flags_r += 1;
            }
        }
        let fe = flags_e as f64 / n as f64;
        let fr = flags_r as f64 / n as f64;
        // both estimate pi_prime_sq; allow 5-sigma binomial slack
        let sigma = (ctx_e.pi_prime_sq * (1.0 - ctx_e.pi_prime_sq) / n as f64).sqrt();
        assert!((fe - ctx_e.pi_prime_sq).abs() < 5.0 * sigma, "enumerate path fe={fe}");
        assert!((fr - ctx_e.pi_prime_sq).abs() < 5.0 * sigma, "rejection path fr={fr}");
        // solutions from both paths are band-certified members
        for ctx in [&ctx_e, &ctx_r] {
            let sol = solution_search(ctx, &mut rng, &mut ledger).unwrap();
            assert!(t_sol_membership(&list, sol.x_id, sol.y_id, sol.z_id, &params).is_some());
        }
    }

    #[test]
    fn ledger_identity_matches_symbolic_composition() {
        let d = 10;
        let m = 40;
        let mut rng = substream(60, "sieve/ledger");
        let mut params = SieveParams::for_instance(d, m).unwrap();
        // integer-valued costs keep every f64 product exact
        params.cost_rcollision_samp = 3.0;
        params.cost_theta_check = 2.0;
        params.cost_decode_prime = 7.0;
        params.cost_z_samp = 4.0;
        params.cost_z_check = 1.0;
        params.cost_tuple_check = 5.0;
        let list = sample_uniform_list(d, m, &mut rng);
        let code = sample_rpc(d, params.code_b, params.code_m, 1, &mut rng).unwrap();
        let code_prime = sample_rpc(d, params.code_b, params.code_m_prime, 1, &mut rng).unwrap();
        let (store, store_prime) = preprocess(&list, &code, &code_prime, &params).unwrap();
        let ctx =
            SearchContext::build(&list, &store, &store_prime, &code, &code_prime, &params).unwrap();
        if ctx.pi_prime_sq == 0.0 {
            return;
        }
        let mut ledger = QueryLedger::new();
        solution_search(&ctx, &mut rng, &mut ledger).unwrap();
        let inner = ctx.r1 as f64 * (3.0 + 2.0) + 7.0 + ctx.r2 as f64 * (4.0 + 1.0);
        let total = ctx.r3 as f64 * (inner + 5.0);
        assert_eq!(ledger.total_steps, total, "ledger must equal the closed form exactly");
    }

    #[test]
    fn three_list_recovers_triples_on_dense_instance() {
        let d = 10;
        let m = 160;
        let mut rng = substream(61, "sieve/threelist");
        let mut params = SieveParams::for_instance(d, m).unwrap();
        params.ell1 = 4;
        params.ell2 = 200;
        let list = sample_uniform_list(d, m, &mut rng);
        let t_sol = enumerate_t_sol(&list, &params).unwrap();
        assert!(!t_sol.is_empty(), "instance should be dense at this scale");
        let report = three_list(&list, &params, &mut rng).unwrap();
        assert!(
            report.distinct_triples >= 1,
            "dense instance must yield at least one triple"
        );
        let keys: std::collections::BTreeSet<_> =
            t_sol.iter().map(|t| (t.x_id, t.y_id, t.z_id)).collect();
        for t in &report.triples {
            assert!(keys.contains(&(t.x_id, t.y_id, t.z_id)), "emitted non-member");
            assert!(t_sol_membership(&list, t.x_id, t.y_id, t.z_id, &params).is_some());
            // norm guarantee under choose_theta parameters
            let mut diff = vec![0.0; d];
            for i in 0..d {
                diff[i] = list[t.x_id].coords()[i]
                    - list[t.y_id].coords()[i]
                    - list[t.z_id].coords()[i];
            }
            assert!(crate::sphere::norm(&diff) <= 1.0 + 1e-10);
        }
        assert!(report.ledger.total_steps > 0.0);
    }

    #[test]
    fn oversize_decode_sets_raise_the_flag() {
        // huge epsilon-free trick: a tiny truncation cap forces oversize
        let d = 10;
        let m = 24;
        let mut rng = substream(62, "sieve/oversize");
        let mut params = SieveParams::for_instance(d, m).unwrap();
        params.truncation_cap = 1;
        params.epsilon = 0.09; // wide band, larger decode sets
        params.cos_theta_prime = choose_theta(params.epsilon).unwrap().1;
        let list = sample_uniform_list(d, m, &mut rng);
        let code = sample_rpc(d, params.code_b, params.code_m, 1, &mut rng).unwrap();
        let code_prime = sample_rpc(d, params.code_b, 64, 1, &mut rng).unwrap();
        let (store, store_prime) = preprocess(&list, &code, &code_prime, &params).unwrap();
        let ctx =
            SearchContext::build(&list, &store, &store_prime, &code, &code_prime, &params).unwrap();
        if ctx.pi_sq == 0.0 {
            return;
        }
        let mut ledger = QueryLedger::new();
        let mut saw_oversize = ctx.any_oversize;
        for _ in 0..2000 {
            let out = tuple_sample(&ctx, &mut rng, &mut ledger).unwrap();
            saw_oversize |= out.oversize;
        }
        assert!(saw_oversize, "cap of 1 with wide bands must truncate somewhere");
    }

    #[test]
    fn goodness_trivially_concentrated_under_covering_code() {
        // with eps covering [-1,1], every bucket is the whole list
        let d = 10;
        let m = 40;
        let mut rng = substream(63, "sieve/goodness-cover");
        let mut params = SieveParams::for_instance(d, m).unwrap();
        params.epsilon = 2.0;
        let list = sample_uniform_list(d, m, &mut rng);
        let code = sample_rpc(d, params.code_b, 4, 1, &mut rng).unwrap();
        let code_prime = sample_rpc(d, params.code_b, 4, 1, &mut rng).unwrap();
        let report = goodness_check(&list, &code, &code_prime, &params).unwrap();
        // p_band = 1, buckets = m: ratio exactly 1
        assert!(report.bucket_concentration.pass);
        assert!((report.bucket_concentration.measured_min - 1.0).abs() < 1e-12);
    }
}
