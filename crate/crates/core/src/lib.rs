//! Simulation laboratory for a two-block REM-type spin glass.
//!
//! The model has configurations `σ = (σ1, σ2)` with energy
//! `X1[σ1] + X2[σ2]`, optionally perturbed by an independent field of variance
//! `N a2 δ ω(N)` with `ω(N) = α log N / N`. The crate provides exact Gibbs
//! enumeration, the extremal process of shifted energies, the two-level
//! Poisson cascade and the Bolthausen-Sznitman coalescent that describe the
//! large-N limit, Ghirlanda-Guerra residuals, and an experiment harness.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alias;
pub mod cascade;
pub mod coalescent;
pub mod eggi;
pub mod error;
pub mod extremes;
pub mod gibbs;
pub mod harness;
pub mod model;
pub mod observable;
pub mod parallel;
pub mod rng;
pub mod scan;
pub mod stats;

pub use error::{Error, Result};
pub use model::{Configuration, DisorderRealization, ModelParams, Overlap};
pub use stats::{mc_merge, Estimate};
