//! Library side of the `moc3d` command line tool: configuration and
//! geometry file loading, run orchestration, and report writing. The
//! binary in `main.rs` is a thin argument-parsing shell over this.

pub mod config;
pub mod input;
pub mod report;
pub mod runner;
