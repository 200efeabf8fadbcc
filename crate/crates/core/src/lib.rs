//! Simulator and analysis toolkit for a heralded single-photon diamond phonon memory.
#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

pub mod analysis;
pub mod coincidence;
pub mod error;
pub mod memory;
pub mod model;
pub mod montecarlo;
pub mod photostat;
pub mod scenario;

pub use error::{Error, Result};
