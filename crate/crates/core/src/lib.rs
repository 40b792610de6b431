//! Input-sparsity-time low-distortion subspace embeddings for lp norms,
//! p in [1, 2], with subspace-preserving row sampling, (1 + eps)-approximate
//! lp regression built on top of them, and Monte Carlo verification of the
//! probabilistic guarantees involved.
//!
//! The embedding multiplies an n x d matrix A by an s x n map Pi = S D in
//! one pass over the nonzeros of A: S hashes each row of A to one of s
//! buckets and D scales it by a random sign (p = 2), a Cauchy (p = 1), or a
//! symmetric p-stable variate (1 < p < 2). Sketching, conditioning, row
//! sampling, and regression live in the correspondingly named modules; the
//! `verify` module re-checks the tail bounds those constructions rely on.

pub mod conditioning;
pub mod error;
pub mod families;
pub mod io;
pub mod regression;
pub mod rng;
pub mod sampling;
pub mod sketch;
pub mod sparse;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
