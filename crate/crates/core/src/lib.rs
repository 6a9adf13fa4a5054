//! Effective capacity regions of two-user fading multiple-access channels
//! with arbitrary input constellations.

pub mod capacity;
pub mod cli;
pub mod channel;
pub mod constellation;
pub mod decoding;
pub mod error;
pub mod mmse_mi;
pub mod power_alloc;
pub mod quadrature;
pub mod queue;
pub mod scenario;

pub use error::{Error, Result};
