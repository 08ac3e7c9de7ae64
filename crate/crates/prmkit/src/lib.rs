//! File formats, remote inference clients and the command-line driver for
//! [`prmkit_core`].

pub mod cli;
pub mod config;
mod error;
pub mod jsonl;
pub mod remote;
pub mod report;
pub mod run;
pub mod toyfile;

pub use error::{Error, Result};
pub use prmkit_core as core;
