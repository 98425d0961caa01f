//! Random product codes on the sphere and band list-decoding.
//!
//! A code is a union over `t` rotations of a product of `b` per-block
//! codebooks, each living on the radius `1/sqrt(b)` sphere of dimension
//! `d/b`; concatenating one word per block gives a unit vector. Decoding a
//! target `x` finds every codeword whose inner product with `x` lies in the
//! band `[cos a - eps, cos a + eps]`, by sorting per-block partial inner
//! products and depth-first search over blocks with prefix upper/lower
//! bounds. Visited children are located by binary search, so the tree walk
//! touches exactly the prefix-feasible nodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sphere::{dot, UnitVector};

#[derive(Debug, Error)]
pub enum RpcError {
    #[error("block count {b} does not divide dimension {d}")]
    BlockCountMismatch { d: usize, b: usize },
    #[error("code size {0} invalid: {1}")]
    BadCodeSize(usize, &'static str),
    #[error("need at least one rotation")]
    NoRotations,
    #[error("codeword id out of range: {0}")]
    IdOutOfRange(String),
    #[error("target vector has dimension {0}, code has {1}")]
    DimensionMismatch(usize, usize),
    #[error("rotation failed orthogonality check: max deviation {0}")]
    RotationNotOrthogonal(f64),
    #[error("blob version {0} unsupported (expected {1})")]
    BadBlobVersion(u32, u32),
}

/// Compact handle for one codeword: a rotation index plus one index per block.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CodewordId {
    pub rotation: u32,
    pub blocks: Vec<u32>,
}

/// Row-major orthogonal matrix with positive determinant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rotation {
    dim: usize,
    rows: Vec<f64>,
}

impl Rotation {
    fn identity(d: usize) -> Self {
        let mut rows = vec![0.0; d * d];
        for i in 0..d {
            rows[i * d + i] = 1.0;
        }
        Rotation { dim: d, rows }
    }

    /// Haar-distributed rotation: Gram-Schmidt of a Gaussian matrix with the
    /// diagonal sign fix, then a determinant fix into the special orthogonal
    /// group.
    fn haar<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        loop {
            let mut cols: Vec<Vec<f64>> = (0..d)
                .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            if let Some(rot) = orthonormalize(&mut cols) {
                return rot;
            }
        }
    }

    /// y = Q x
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| dot(&self.rows[i * d..(i + 1) * d], x))
            .collect()
    }

    /// y = Q^T x
    fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut y = vec![0.0; d];
        for i in 0..d {
            let xi = x[i];
            for (j, yj) in y.iter_mut().enumerate() {
                *yj += self.rows[i * d + j] * xi;
            }
        }
        y
    }

    fn max_orthogonality_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += self.rows[k * d + i] * self.rows[k * d + j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }
}

/// Modified Gram-Schmidt with a re-orthogonalization pass; returns `None` on
/// a (measure-zero) rank-deficient draw. The determinant sign is computed
/// from the orientation of the original columns and fixed by negating the
/// last column when needed.
fn orthonormalize(cols: &mut [Vec<f64>]) -> Option<Rotation> {
    let d = cols.len();
    let sign = det_sign(cols);
    if sign == 0 {
        return None;
    }
    for i in 0..d {
        for _pass in 0..2 {
            for j in 0..i {
                let proj = dot(&cols[i], &cols[j]);
                for k in 0..d {
                    let v = cols[j][k];
                    cols[i][k] -= proj * v;
                }
            }
        }
        let n = dot(&cols[i], &cols[i]).sqrt();
        if n < 1e-300 {
            return None;
        }
        for v in cols[i].iter_mut() {
            *v /= n;
        }
    }
    if sign < 0 {
        for v in cols[d - 1].iter_mut() {
            *v = -*v;
        }
    }
    let mut rows = vec![0.0; d * d];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..d {
            rows[i * d + j] = col[i];
        }
    }
    Some(Rotation { dim: d, rows })
}

/// Sign of the determinant by Gaussian elimination with partial pivoting.
fn det_sign(cols: &[Vec<f64>]) -> i32 {
    let d = cols.len();
    let mut a = vec![0.0; d * d];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..d {
            a[i * d + j] = col[i];
        }
    }
    let mut sign = 1i32;
    for p in 0..d {
        let (pivot_row, pivot_val) = (p..d)
            .map(|r| (r, a[r * d + p].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        if pivot_val == 0.0 {
            return 0;
        }
        if pivot_row != p {
            for c in 0..d {
                a.swap(p * d + c, pivot_row * d + c);
            }
            sign = -sign;
        }
        if a[p * d + p] < 0.0 {
            sign = -sign;
        }
        for r in (p + 1)..d {
            let f = a[r * d + p] / a[p * d + p];
            for c in p..d {
                let v = a[p * d + c];
                a[r * d + c] -= f * v;
            }
        }
    }
    sign
}

pub const BLOB_VERSION: u32 = 1;

/// Versioned serialization of a code: seed and shape suffice to regenerate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RpcBlob {
    pub version: u32,
    pub d: usize,
    pub b: usize,
    pub m_nominal: usize,
    pub t_rotations: usize,
    pub seed: [u8; 32],
}

/// A sampled random product code: block codebooks plus a rotation set.
#[derive(Debug, Clone)]
pub struct RpcDescription {
    d: usize,
    b: usize,
    block_dim: usize,
    per_block: usize,
    m_nominal: usize,
    /// per_block^b, the realized code size per rotation
    m_realized: usize,
    block_codebooks: Vec<Vec<Vec<f64>>>,
    rotations: Vec<Rotation>,
    seed: [u8; 32],
}

/// Default block count: the divisor of d nearest to round(log2 d), ties
/// toward the larger divisor.
pub fn default_block_count(d: usize) -> usize {
    let target = (d as f64).log2().round() as i64;
    let mut best = 1usize;
    let mut best_err = i64::MAX;
    for b in 1..=d {
        if d % b != 0 {
            continue;
        }
        let err = (b as i64 - target).abs();
        if err < best_err || (err == best_err && b > best) {
            best = b;
            best_err = err;
        }
    }
    best
}

/// Smallest k with k^b >= m.
fn per_block_size(m: usize, b: usize) -> usize {
    let mut k = (m as f64).powf(1.0 / b as f64).floor() as usize;
    k = k.max(1);
    while pow_checked(k, b) < m as u128 {
        k += 1;
    }
    while k > 1 && pow_checked(k - 1, b) >= m as u128 {
        k -= 1;
    }
    k
}

fn pow_checked(k: usize, b: usize) -> u128 {
    let mut acc: u128 = 1;
    for _ in 0..b {
        acc = acc.saturating_mul(k as u128);
    }
    acc
}

/// Sample a fresh code. The generation seed is drawn from `rng` first, so
/// every sampled code is reproducible through its blob.
pub fn sample_rpc<R: Rng + ?Sized>(
    d: usize,
    b: usize,
    m_nominal: usize,
    t_rotations: usize,
    rng: &mut R,
) -> Result<RpcDescription, RpcError> {
    let mut seed = [0u8; 32];
    rng.fill(&mut seed);
    RpcDescription::from_seed(d, b, m_nominal, t_rotations, seed)
}

impl RpcDescription {
    pub fn from_seed(
        d: usize,
        b: usize,
        m_nominal: usize,
        t_rotations: usize,
        seed: [u8; 32],
    ) -> Result<Self, RpcError> {
        if b == 0 || d == 0 || d % b != 0 {
            return Err(RpcError::BlockCountMismatch { d, b });
        }
        if m_nominal == 0 {
            return Err(RpcError::BadCodeSize(0, "must be positive"));
        }
        if t_rotations == 0 {
            return Err(RpcError::NoRotations);
        }
        let block_dim = d / b;
        let per_block = per_block_size(m_nominal, b);
        let m_realized = pow_checked(per_block, b);
        if m_realized > (1u128 << 40) {
            return Err(RpcError::BadCodeSize(m_nominal, "realized code too large"));
        }
        let mut rng = ChaCha12Rng::from_seed(seed);
        let scale = 1.0 / (b as f64).sqrt();
        let mut block_codebooks = Vec::with_capacity(b);
        for _ in 0..b {
            let mut words = Vec::with_capacity(per_block);
            for _ in 0..per_block {
                loop {
                    let v: Vec<f64> =
                        (0..block_dim).map(|_| rng.sample(StandardNormal)).collect();
                    let n = dot(&v, &v).sqrt();
                    if n > 0.0 && n.is_finite() {
                        words.push(v.into_iter().map(|x| x * scale / n).collect::<Vec<f64>>());
                        break;
                    }
                }
            }
            block_codebooks.push(words);
        }
        let rotations: Vec<Rotation> = if t_rotations == 1 && b == 1 {
            // a random rotation of a full uniform codebook is redundant
            vec![Rotation::identity(d)]
        } else {
            (0..t_rotations)
                .map(|_| Rotation::haar(d, &mut rng))
                .collect()
        };
        for r in &rotations {
            let defect = r.max_orthogonality_defect();
            if defect > 1e-10 {
                return Err(RpcError::RotationNotOrthogonal(defect));
            }
        }
        Ok(RpcDescription {
            d,
            b,
            block_dim,
            per_block,
            m_nominal,
            m_realized: m_realized as usize,
            block_codebooks,
            rotations,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn block_count(&self) -> usize {
        self.b
    }

    pub fn per_block(&self) -> usize {
        self.per_block
    }

    pub fn rotation_count(&self) -> usize {
        self.rotations.len()
    }

    /// Realized code size per rotation (per_block^b); the nominal M is
    /// rounded up to this.
    pub fn realized_size(&self) -> usize {
        self.m_realized
    }

    /// Total codeword count t * M, with multiplicity across rotations.
    pub fn total_codewords(&self) -> usize {
        self.m_realized * self.rotations.len()
    }

    pub fn to_blob(&self) -> RpcBlob {
        RpcBlob {
            version: BLOB_VERSION,
            d: self.d,
            b: self.b,
            m_nominal: self.m_nominal,
            t_rotations: self.rotations.len(),
            seed: self.seed,
        }
    }

    pub fn from_blob(blob: &RpcBlob) -> Result<Self, RpcError> {
        if blob.version != BLOB_VERSION {
            return Err(RpcError::BadBlobVersion(blob.version, BLOB_VERSION));
        }
        Self::from_seed(blob.d, blob.b, blob.m_nominal, blob.t_rotations, blob.seed)
    }

    fn check_id(&self, id: &CodewordId) -> Result<(), RpcError> {
        let ok = (id.rotation as usize) < self.rotations.len()
            && id.blocks.len() == self.b
            && id.blocks.iter().all(|&j| (j as usize) < self.per_block);
        if ok {
            Ok(())
        } else {
            Err(RpcError::IdOutOfRange(format!("{id:?}")))
        }
    }

    /// Materialize the codeword `Q (c_1, ..., c_b)` as a unit vector.
    pub fn codeword_vector(&self, id: &CodewordId) -> Result<UnitVector, RpcError> {
        self.check_id(id)?;
        let mut concat = Vec::with_capacity(self.d);
        for (blk, &j) in id.blocks.iter().enumerate() {
            concat.extend_from_slice(&self.block_codebooks[blk][j as usize]);
        }
        let rotated = self.rotations[id.rotation as usize].apply(&concat);
        UnitVector::from_unnormalized(rotated)
            .map_err(|_| RpcError::IdOutOfRange("degenerate codeword".into()))
    }

    /// Dense rank of a codeword id: rotation-major, then mixed radix over
    /// block indices. Gives the opaque u64 ids used by the relation store.
    pub fn flat_index(&self, id: &CodewordId) -> u64 {
        let mut acc = id.rotation as u64;
        for &j in &id.blocks {
            acc = acc * self.per_block as u64 + j as u64;
        }
        acc
    }

    pub fn unflatten(&self, mut flat: u64) -> CodewordId {
        let mut blocks = vec![0u32; self.b];
        for slot in blocks.iter_mut().rev() {
            *slot = (flat % self.per_block as u64) as u32;
            flat /= self.per_block as u64;
        }
        CodewordId {
            rotation: flat as u32,
            blocks,
        }
    }

    /// All codeword ids whose inner product with `x` lies in
    /// `[cos_alpha - epsilon, cos_alpha + epsilon]`, in lexicographic order.
    pub fn decode(
        &self,
        x: &UnitVector,
        cos_alpha: f64,
        epsilon: f64,
    ) -> Result<Vec<CodewordId>, RpcError> {
        Ok(self.decode_instrumented(x, cos_alpha, epsilon)?.0)
    }

    /// Decode plus per-block-level visited-node counts for the pruning bound.
    pub fn decode_instrumented(
        &self,
        x: &UnitVector,
        cos_alpha: f64,
        epsilon: f64,
    ) -> Result<(Vec<CodewordId>, DecodeStats), RpcError> {
        if x.dim() != self.d {
            return Err(RpcError::DimensionMismatch(x.dim(), self.d));
        }
        let lo = cos_alpha - epsilon;
        let hi = cos_alpha + epsilon;
        let mut out = Vec::new();
        let mut stats = DecodeStats {
            nodes_per_level: vec![0u64; self.b],
        };
        for (rot_idx, rot) in self.rotations.iter().enumerate() {
            let y = rot.apply_transpose(x.coords());
            // per-block partial inner products, sorted descending
            let mut partials: Vec<Vec<(f64, u32)>> = Vec::with_capacity(self.b);
            for blk in 0..self.b {
                let chunk = &y[blk * self.block_dim..(blk + 1) * self.block_dim];
                let mut row: Vec<(f64, u32)> = self.block_codebooks[blk]
                    .iter()
                    .enumerate()
                    .map(|(j, w)| (dot(chunk, w), j as u32))
                    .collect();
                row.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
                partials.push(row);
            }
            // rest_max/rest_min over blocks strictly after each level
            let mut rest_max = vec![0.0f64; self.b + 1];
            let mut rest_min = vec![0.0f64; self.b + 1];
            for blk in (0..self.b).rev() {
                rest_max[blk] = rest_max[blk + 1] + partials[blk].first().unwrap().0;
                rest_min[blk] = rest_min[blk + 1] + partials[blk].last().unwrap().0;
            }
            let mut chosen = vec![0u32; self.b];
            self.decode_rec(
                rot_idx as u32,
                0,
                0.0,
                lo,
                hi,
                &partials,
                &rest_max,
                &rest_min,
                &mut chosen,
                &mut out,
                &mut stats,
            );
        }
        out.sort_unstable();
        Ok((out, stats))
    }

    #[allow(clippy::too_many_arguments)]
    fn decode_rec(
        &self,
        rotation: u32,
        level: usize,
        prefix: f64,
        lo: f64,
        hi: f64,
        partials: &[Vec<(f64, u32)>],
        rest_max: &[f64],
        rest_min: &[f64],
        chosen: &mut [u32],
        out: &mut Vec<CodewordId>,
        stats: &mut DecodeStats,
    ) {
        let row = &partials[level];
        // children j are feasible iff prefix + s_j + [rest_min, rest_max] of
        // the remaining blocks intersects [lo, hi]; the feasible s_j form an
        // interval located by binary search on the descending row.
        let s_hi = hi - prefix - rest_min[level + 1];
        let s_lo = lo - prefix - rest_max[level + 1];
        let start = row.partition_point(|&(s, _)| s > s_hi);
        let end = row.partition_point(|&(s, _)| s >= s_lo);
        for &(s, j) in &row[start..end] {
            stats.nodes_per_level[level] += 1;
            chosen[level] = j;
            if level + 1 == self.b {
                let total = prefix + s;
                if total >= lo && total <= hi {
                    out.push(CodewordId {
                        rotation,
                        blocks: chosen.to_vec(),
                    });
                }
            } else {
                self.decode_rec(
                    rotation,
                    level + 1,
                    prefix + s,
                    lo,
                    hi,
                    partials,
                    rest_max,
                    rest_min,
                    chosen,
                    out,
                    stats,
                );
            }
        }
    }
}

/// Instrumentation of one decode call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeStats {
    /// Children expanded at each block level, summed over rotations.
    pub nodes_per_level: Vec<u64>,
}

/// Empirical probability that a fixed pair (x, y) at separation `cos_theta`
/// shares at least one decoded codeword, over fresh code samples.
pub fn mc_collision_probability<R: Rng + ?Sized>(
    d: usize,
    b: usize,
    m_nominal: usize,
    spec: &crate::sphere::AngleSpec,
    n_trials: u64,
    rng: &mut R,
) -> Result<crate::stats::FreqEstimate, RpcError> {
    assert!(n_trials >= 100, "need at least 100 trials");
    let ct = spec.cos_theta;
    let st = (1.0 - ct * ct).max(0.0).sqrt();
    let mut xc = vec![0.0; d];
    xc[0] = 1.0;
    let x = UnitVector::new(xc).expect("basis vector");
    let mut yc = vec![0.0; d];
    yc[0] = ct;
    yc[1] = st;
    let y = UnitVector::from_unnormalized(yc).expect("unit by construction");
    let mut hits = 0u64;
    for _ in 0..n_trials {
        let code = sample_rpc(d, b, m_nominal, 1, rng)?;
        let dx = code.decode(&x, spec.cos_alpha, spec.epsilon)?;
        if dx.is_empty() {
            continue;
        }
        let dy = code.decode(&y, spec.cos_beta, spec.epsilon)?;
        // both lists are lexicographically sorted
        let mut i = 0;
        let mut j = 0;
        let mut shared = false;
        while i < dx.len() && j < dy.len() {
            match dx[i].cmp(&dy[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    shared = true;
                    break;
                }
            }
        }
        if shared {
            hits += 1;
        }
    }
    Ok(crate::stats::FreqEstimate::from_counts(
        hits,
        n_trials,
        crate::stats::Z_GATE,
    ))
}

/// Brute-force band filter over all materialized codewords; the reference
/// oracle for `decode`.
pub fn brute_force_band_filter(
    code: &RpcDescription,
    x: &UnitVector,
    cos_alpha: f64,
    epsilon: f64,
) -> Result<Vec<CodewordId>, RpcError> {
    let mut out = Vec::new();
    for flat in 0..code.total_codewords() as u64 {
        let id = code.unflatten(flat);
        let w = code.codeword_vector(&id)?;
        if (w.dot(x) - cos_alpha).abs() <= epsilon {
            out.push(id);
        }
    }
    out.sort_unstable();
    Ok(out)
}
