//! Domain variations of p-capacity, q-torsional rigidity and their product at the ball.

// `!(x > 0.0)` style comparisons also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli_reports;
pub mod closed_forms;
pub mod error;
pub mod fields;
pub mod numeric_oracle;
pub mod regime_classifier;
pub mod sphere_harmonics;
pub mod variation_engine;

pub use error::{Error, Result};
