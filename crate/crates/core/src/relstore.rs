//! Two-way keyed store for a finite relation between element ids and
//! codeword ids, emulating superposition lookups over classically stored
//! data: the forward map `x -> R(x)`, the backward map `c -> R^{-1}(c)`, and
//! uniform sampling inside a bucket (the classical stand-in for a uniform
//! superposition over it).
//!
//! Buckets are append-ordered and index-addressable. Ids are opaque `u64`s
//! assigned by the caller; the store never inspects vectors.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use thiserror::Error;

pub type ElemId = u64;
pub type CodeId = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("pair ({0}, {1}) already present")]
    DuplicatePair(u64, u64),
    #[error("store is frozen; inserts are no longer allowed")]
    Frozen,
    #[error("snapshot version {0} unsupported (expected {1})")]
    BadSnapshotVersion(u32, u32),
    #[error("snapshot replay failed: {0}")]
    BadSnapshot(String),
}

/// Lookup direction: by element id (forward) or by codeword id (backward).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Default)]
pub struct RelationStore {
    forward: HashMap<ElemId, Vec<CodeId>>,
    backward: HashMap<CodeId, Vec<ElemId>>,
    pairs: Vec<(ElemId, CodeId)>,
    pair_set: HashSet<(ElemId, CodeId)>,
    frozen: bool,
}

pub const SNAPSHOT_VERSION: u32 = 1;

/// Serializable snapshot: the insertion log reproduces both bucket orders.
#[derive(Debug, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub version: u32,
    pub frozen: bool,
    pub pairs: Vec<(ElemId, CodeId)>,
}

impl RelationStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of stored pairs |R|.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn insert(&mut self, x: ElemId, c: CodeId) -> Result<(), StoreError> {
        if self.frozen {
            return Err(StoreError::Frozen);
        }
        if !self.pair_set.insert((x, c)) {
            return Err(StoreError::DuplicatePair(x, c));
        }
        self.forward.entry(x).or_default().push(c);
        self.backward.entry(c).or_default().push(x);
        self.pairs.push((x, c));
        Ok(())
    }

    /// Make the store immutable; concurrent read access is safe afterwards.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// The bucket `R(x)` in insertion order; empty slice if x is unseen.
    pub fn lookup_by_x(&self, x: ElemId) -> &[CodeId] {
        self.forward.get(&x).map_or(&[], |v| v.as_slice())
    }

    /// The bucket `R^{-1}(c)` in insertion order; empty slice if c is unseen.
    pub fn lookup_by_c(&self, c: CodeId) -> &[ElemId] {
        self.backward.get(&c).map_or(&[], |v| v.as_slice())
    }

    pub fn bucket(&self, key: u64, direction: Direction) -> &[u64] {
        match direction {
            Direction::Forward => self.lookup_by_x(key),
            Direction::Backward => self.lookup_by_c(key),
        }
    }

    /// Uniform element of a bucket, or `None` for an empty bucket (the
    /// "bottom" branch of the superposition lookup).
    pub fn sample_bucket<R: Rng + ?Sized>(
        &self,
        key: u64,
        direction: Direction,
        rng: &mut R,
    ) -> Option<u64> {
        let b = self.bucket(key, direction);
        if b.is_empty() {
            None
        } else {
            Some(b[rng.gen_range(0..b.len())])
        }
    }

    /// Keys of the forward map (element ids with nonempty buckets), sorted.
    pub fn x_keys(&self) -> Vec<ElemId> {
        let mut k: Vec<_> = self.forward.keys().copied().collect();
        k.sort_unstable();
        k
    }

    /// Keys of the backward map (codeword ids with nonempty buckets), sorted.
    pub fn c_keys(&self) -> Vec<CodeId> {
        let mut k: Vec<_> = self.backward.keys().copied().collect();
        k.sort_unstable();
        k
    }

    /// Largest backward bucket, 0 when the store is empty.
    pub fn max_backward_bucket(&self) -> usize {
        self.backward.values().map(|v| v.len()).max().unwrap_or(0)
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot {
            version: SNAPSHOT_VERSION,
            frozen: self.frozen,
            pairs: self.pairs.clone(),
        }
    }

    pub fn from_snapshot(s: &StoreSnapshot) -> Result<Self, StoreError> {
        if s.version != SNAPSHOT_VERSION {
            return Err(StoreError::BadSnapshotVersion(s.version, SNAPSHOT_VERSION));
        }
        let mut store = RelationStore::new();
        for &(x, c) in &s.pairs {
            store
                .insert(x, c)
                .map_err(|e| StoreError::BadSnapshot(e.to_string()))?;
        }
        if s.frozen {
            store.freeze();
        }
        Ok(store)
    }
}
