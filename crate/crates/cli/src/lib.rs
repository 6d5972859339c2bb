//! Configuration, file formats and commands behind the `stable` binary.

// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod xyz;

pub use error::{CliError, CliResult};
