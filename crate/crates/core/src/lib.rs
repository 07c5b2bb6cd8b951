//! Spoofing-resilient localization by sliding-window factor graph fusion of
//! GNSS pseudoranges and odometry, with a chi-squared spoofing detector,
//! odometry-only mitigation, and periodic signal authentication.

// Negated float comparisons are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chimera;
pub mod detector;
pub mod error;
pub mod factors;
pub mod harness;
pub mod icp;
pub mod liegroup;
pub mod simkit;
pub mod solver;

pub use error::{Error, Result};
pub use liegroup::{Pose, Rotation, Tangent};
