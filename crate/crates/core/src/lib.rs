// `!(x > 0.0)` is the idiom for rejecting NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circuits;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod measurement;
pub mod open_system;
pub mod optimize;
pub mod propagation;
pub mod pulse;
pub mod spin;
pub mod transmon;

pub use error::{Error, Result};
