//! Command-line front end for `mlcsc`: run configuration, checkpoints,
//! code export and figures.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod figures;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::CliError;
