//! Unsupervised detection of topological transitions with predictive models.
//!
//! A regressor is trained to recover a tuning parameter β from sampled
//! configurations; the derivative of its mean prediction with respect to the
//! true β peaks where the data stops carrying information about β, which
//! marks a transition or crossover.
//!
//! Two model families supply the data: the classical Ising gauge theory
//! ([`igt`]) and projections of the field-deformed toric-code ground state
//! ([`toric`]). Every sampler has an exact-enumeration counterpart for small
//! lattices.

// Negated float comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod detector;
pub mod error;
pub mod fidelity;
pub mod igt;
pub mod lattice;
mod parallel;
pub mod pipeline;
pub mod plot;
pub mod predictor;
pub mod rng;
pub mod stats;
pub mod table;
pub mod toric;
pub mod verify;

pub use error::{Error, Result};
