//! Building blocks for 3-tuple sieving on the unit sphere and its quantum cost model.
//!
//! The crate is organized around one pipeline: sample points on `S^{d-1}`
//! ([`sphere`]), filter them through random product codes ([`rpc`]), store the
//! induced point/codeword relations in a two-way keyed store ([`relstore`]),
//! emulate the nested amplitude-amplification search over those stores with
//! exact probability bookkeeping ([`sieve`], [`aasim`]), and evaluate the
//! asymptotic cost model whose optimum gives the `2^{0.284551 d}` time
//! exponent ([`exponents`]). The [`lattice`] module applies the classical
//! rendering of the same 3-combination step to small SVP instances.

pub mod aasim;
pub mod exponents;
pub mod lattice;
pub mod relstore;
pub mod rng;
pub mod rpc;
pub mod sieve;
pub mod sphere;
pub mod stats;
