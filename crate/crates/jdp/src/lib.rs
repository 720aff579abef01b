//! Files, threads and the command line around `jdp-core`.

pub mod cli;
pub mod io;
pub mod manifest;
pub mod parallel;

pub use jdp_core;
