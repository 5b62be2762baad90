//! Files, checkpoints, run drivers and the command line on top of
//! `voxsr-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod runner;
pub mod table;
pub mod trainlog;
pub mod volfile;

pub use error::{CliError, Result};
