//! Simulation of a receiver-side blinding attack on BB84/BBM92 that exploits
//! count-rate-dependent dead time in single-photon avalanche diodes.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod analysis;
pub mod detector;
pub mod error;
pub mod protocol;
pub mod quantum;
pub mod timetag;

pub use error::{Error, Result};
