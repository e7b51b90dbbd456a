//! Binary classifiers that remain fair under every reweighting of the
//! training sample.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`] loads CSV benchmarks and produces seeded splits.
//! * [`hypothesis`] holds logistic-linear models and uniform ensembles.
//! * [`metrics`] computes weighted risk and demographic-parity /
//!   equalized-odds gaps under arbitrary weights.
//! * [`geometry`] projects onto weight sets and discretizes weights and
//!   group marginals.
//! * [`linprog`] is a small dense two-phase simplex solver.
//! * [`oracle`] is the cost-sensitive learner used as the hypothesis
//!   player's best response.
//! * [`adversary`] finds maximally unfair reweightings, both for the
//!   multiplier player of the Lagrangian game and for post-hoc attacks.
//! * [`apxfair`] runs the inner learner-vs-adversary game and returns an
//!   approximately fair ensemble for a fixed weighting.
//! * [`meta`] wraps it in the outer robust loop over weightings.
//! * [`harness`] drives experiments and writes plot-ready CSVs.

pub mod adversary;
pub mod apxfair;
pub mod data;
mod error;
pub mod geometry;
pub mod harness;
pub mod hypothesis;
pub mod linprog;
pub mod meta;
pub mod metrics;
pub mod oracle;

pub use error::{Error, Result};
