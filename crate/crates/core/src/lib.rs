//! Skipped points of near-critical transient (1,2) random walks.
//!
//! The walk moves from `n` to `n + 2` with probability `p_n = 1/3 + r_n` and
//! to `n - 1` otherwise, reflecting at `0` (`p_0 = 1`).

pub mod contfrac;
pub mod criteria;
pub mod dseries;
pub mod error;
pub mod exact;
pub mod montecarlo;
pub mod perturbation;
pub mod verify;

pub use error::{Error, Result};
pub use perturbation::{ChainParams, Family, PerturbationSpec};
