#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::approx_constant, clippy::needless_range_loop)]

pub mod error;
pub mod ftts;
pub mod grid;
pub mod metrics;
pub mod relay;
pub mod scenario;

pub use error::{Error, Result};
