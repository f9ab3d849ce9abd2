//! Numerical tools for large-deviation estimates of ergodic sums over
//! mixing Markov chains and expanding interval maps.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod experiment;
pub mod montecarlo;
pub mod operator;
pub mod systems;
pub mod truncation;
