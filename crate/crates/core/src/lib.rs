//! Method-of-characteristics (MOC) neutron transport for axially extruded
//! 3D geometries.
//!
//! The pipeline: build an extruded geometry (2D radial layout swept along a
//! 1D axial mesh), lay cyclic 2D tracks over the radial plane, attach a
//! z-stack of 3D tracks to every (2D track, polar angle) pair, then sweep
//! the 3D tracks either by generating their segments on the fly (OTF), from
//! a preloaded explicit segment store (EXP), or a budget-driven mix of both.
//! A k-eigenvalue power iteration sits on top of the sweep.

pub mod geometry;
pub mod quadrature;
pub mod sched;
pub mod solver;
pub mod trace2d;
pub mod trace3d;

use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to identify the
/// offending entity (FSR, track, config key) without a debugger.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("unknown material '{0}'")]
    UnknownMaterial(String),

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("point ({x}, {y}) outside the radial domain")]
    OutOfDomain { x: f64, y: f64 },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("tracing error on track {track}: {msg}")]
    Tracing { track: usize, msg: String },

    #[error("segment store capacity exceeded: need {needed} bytes, budget {budget}")]
    Capacity { needed: u64, budget: u64 },

    #[error("eigenvalue solve error: {0}")]
    Eigenvalue(String),

    #[error("numerical error: non-finite or negative flux in FSR {fsr} (group {group})")]
    NonPhysicalFlux { fsr: usize, group: usize },

    #[error(
        "power iteration did not converge in {iterations} iterations \
         (last dk = {last_dk:.3e}, last source rms = {last_rms:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        last_dk: f64,
        last_rms: f64,
        /// Per-iteration (k_eff, source rms) history for post-mortems.
        history: Vec<(f64, f64)>,
    },

    #[error("worker {worker} panicked while processing track {track:?}")]
    Execution { worker: usize, track: Option<(u32, u16, u32)> },
}

pub type Result<T> = std::result::Result<T, Error>;
