//! Simulation harness, configuration, output formats and command line for
//! forward gradient descent experiments built on `fgd-core`.

pub mod bound;
pub mod cli;
pub mod config;
pub mod harness;
pub mod output;
pub mod verify;
