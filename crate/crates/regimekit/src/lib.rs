//! File formats, parallel execution and the command-line driver for
//! `regimekit-core`.

pub mod cli;
pub mod error;
pub mod exec;
pub mod heatmap;
pub mod io;
pub mod report;

pub use error::{ExitKind, RunError};
pub use regimekit_core as core;
