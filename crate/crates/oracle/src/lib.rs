//! Independent reference implementations used to cross-check the main
//! solver from test code. Everything here favors obviousness over speed:
//! exhaustive walks, dense surface enumeration, textbook discretizations.
//! None of it is linked into shipped binaries — this crate only ever
//! appears as a dev-dependency.

pub mod expint;
pub mod ranges;
pub mod sn1d;
pub mod trace;

pub use expint::e3;
pub use ranges::brute_member_ranges;
pub use sn1d::{sn_slab_k, SlabRegion};
pub use trace::trace_line_3d;
