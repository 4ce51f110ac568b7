//! Simulation and numerical analysis of block Markov chains.
//!
//! A block Markov chain on `n` states is driven by a small `K x K` cluster
//! transition matrix: from a state in cluster `k` the chain jumps to cluster
//! `l` with probability `p[k][l]` and lands on a uniformly chosen state of
//! that cluster. With `ell = lambda * n^2` steps the empirical frequency
//! matrix `N` and the empirical transition matrix `P` have singular value
//! distributions (of `N / sqrt(n)` and `sqrt(n) P`) that converge to laws
//! determined by a self-consistent system for their Stieltjes transforms.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: the chain parameters, cluster layout and derived rates.
//! - [`sampler`]: seeded path simulation and streamed edge counts.
//! - [`matrices`]: frequency, transition, centered and dilated matrices.
//! - [`spectra`]: singular values, empirical distributions, KS distances.
//! - [`limitlaw`]: step graphons, the resolvent fixed-point solver and
//!   Stieltjes inversion.
//! - [`moments`]: ordered-tree moments and the Hankel positivity check.
//! - [`poisson`]: Poisson limits for single edge counts.
//! - [`pipeline`]: transition data ingestion and parameter estimation.
//!
//! Internally all state and cluster indices are zero-based. Files written by
//! [`io`] use one-based indices.

// NaN-rejecting checks are written as negated comparisons on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod limitlaw;
pub mod matrices;
pub mod model;
pub mod moments;
pub mod pipeline;
pub mod poisson;
pub mod sampler;
pub mod spectra;

pub use error::{Error, Result};
pub use model::{BlockModel, ClusterLayout};
