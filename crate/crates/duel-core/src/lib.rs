//! Adaptive duplicate-eliminating working memory for contrastive learning.
//!
//! When the class marginal of a data stream is biased, negatives drawn from
//! it collide with the anchor's class and the learned representation drifts
//! off the equiangular optimum. The library provides the pieces to study and
//! counteract that at desk scale:
//!
//! - [`geometry`]: unit-sphere primitives and equiangular frame construction;
//! - [`scoring`]: score functions mapping cosine similarity to collision
//!   probability, duplicate counts, pool diversity, and the
//!   near-indistinguishability threshold;
//! - [`memory`]: the fixed-capacity working memory with incremental
//!   duplicate bookkeeping and duplicate-eliminating, FIFO, and reservoir
//!   eviction policies;
//! - [`nce`]: logistic and softmax contrastive losses, closed-form biased
//!   gradients on frames, and finite-difference oracles;
//! - [`sim`]: biased synthetic streams, a linear encoder trained by the full
//!   loop, and the verification sweeps;
//! - [`bench`]: incremental-vs-recompute maintenance benchmark.

pub mod bench;
pub mod error;
pub mod geometry;
pub mod memory;
pub mod nce;
pub mod scoring;
pub mod sim;

pub use error::{Error, Result};
