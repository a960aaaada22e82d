//! Stationary states, relaxation and macroscopic limits of a one-dimensional
//! velocity-jump model with a spatially biased turning rate.

// `!(x > 0.0)` guards are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod config;
pub mod dispersion;
pub mod error;
pub mod grids;
pub mod hypo;
pub mod kinetic;
pub mod macroscopic;
pub mod milne;
pub mod verify;

pub use error::{Error, Result};
