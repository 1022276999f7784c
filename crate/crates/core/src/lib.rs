//! Machine-learned ozone parameterization: per-grid-point ridge regression
//! from the previous day's temperature column to today's ozone column.

// `!(x >= 0.0)` is used deliberately so that NaN fails the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod checks;
pub mod cli;
pub mod climatology;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod eval;
pub mod field;
pub mod grid;
mod linalg;
pub mod store;
pub mod suite;
pub mod toysim;
pub mod trainer;
pub mod transfer;

pub use error::{ErrorClass, MlozError, Result};
