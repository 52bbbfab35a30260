//! File formats, reports and the `noklab` command line on top of
//! [`noklab_core`].

pub mod cli;
pub mod config;
mod error;
pub mod io;
pub mod report;

pub use error::{Error, Result};
