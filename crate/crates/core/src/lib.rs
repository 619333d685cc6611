//! Beable trajectories under continuous spontaneous localization.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod csl;
pub mod error;
pub mod generators;
pub mod harness;
pub mod jump;
pub mod langevin;
pub mod lattice;
pub mod rng;

pub use error::{Error, Result};
