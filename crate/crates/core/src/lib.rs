//! Sparse recovery with the truncated Huber penalty.
//!
//! The penalty `phi_mu(x) = min(1, x^2 / mu^2)` is minimised through a
//! half-quadratic surrogate by block coordinate descent ([`bcd`]), wrapped in
//! a decreasing-`mu` schedule ([`continuation`]). Problem generators,
//! reference methods and a benchmark harness sit alongside.

pub mod baselines;
pub mod bcd;
pub mod bench;
pub mod continuation;
pub mod error;
pub mod linalg;
pub mod penalty;
pub mod problem;
pub mod smoothing;

pub use error::{Result, ThError};
