//! Semi-supervised node classification with differentiated factors.
//!
//! A single graph network hosts `K` factors, each selected by a tagged or
//! perturbed copy of the input features and trained toward its own block of
//! an extended label space. Unlabeled nodes on which all factors agree are
//! ranked by their weakest factor confidence and the top fraction is adopted
//! as pseudo-labels for the next round.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auxiliary;
pub mod error;
pub mod factor;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod pseudo;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
