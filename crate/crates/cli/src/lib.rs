//! Command-line front end for `mlmc-risk`: configuration files, the study
//! drivers behind each subcommand, and CSV/JSON emission.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;
pub mod studies;

pub use commands::{Completion, Failure};
pub use config::{ConfigError, Settings};
