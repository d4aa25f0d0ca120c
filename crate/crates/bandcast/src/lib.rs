// Negated float comparisons (`!(x > 0.0)`) are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod band;
pub mod error;
pub mod estimation;
pub mod forecast;
pub mod simlab;
pub mod tmvn;
pub mod var;

pub use error::{Error, Result};
