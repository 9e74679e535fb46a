//! Energy management for hybrid-electric aircraft.
//!
//! The fuel-optimal power split over a prescribed flight path is posed as a
//! convex program in fuel rate, battery power, mass and state of charge, and
//! solved with a structure-exploiting ADMM iteration. A shrinking-horizon
//! loop re-solves it every step and applies the first move.

// `!(x > 0.0)` style tests are deliberate: they also reject NaN. Index loops
// mirror the recurrences they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod admm;
pub mod convex;
pub mod error;
pub mod models;
pub mod mpc;
pub mod oracle;
pub mod schedule;

pub use error::{Error, Result};
