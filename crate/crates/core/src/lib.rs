//! Angular-invariance domain generalization at desk scale.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod density_ratio;
pub mod distributions;
pub mod error;
pub mod loss;
pub mod maxent;
pub mod model;
pub mod polar;
pub mod synth;
pub mod vecops;
pub mod verify;

pub use error::{Error, Result};
