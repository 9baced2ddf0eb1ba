//! Brute-force member/slab overlap classification.
//!
//! A z-stack is an arithmetic family of parallel chords: member `i` runs
//! from height `z0 + i*dz` (at `s = 0`) with vertical slope `cot` per unit
//! of 2-D path length. Given an axial band `[z_min, z_max]` and a 2-D span
//! `[s_start, s_end]`, this module classifies every member by direct
//! interval comparison — no index arithmetic — so it can serve as an oracle
//! for closed-form range formulas.

/// Walks every member `0..count` and returns two sorted index lists:
/// members whose height interval over `[s_start, s_end]` overlaps the band
/// `[z_min, z_max]` at all (closed-interval touching counts), and members
/// whose height interval lies entirely inside the band.
pub fn brute_member_ranges(
    z0_bottom: f64,
    delta_z: f64,
    count: u32,
    cot: f64,
    z_min: f64,
    z_max: f64,
    s_start: f64,
    s_end: f64,
) -> (Vec<i64>, Vec<i64>) {
    let mut intersecting = Vec::new();
    let mut fully_inside = Vec::new();
    for i in 0..count as i64 {
        let za = z0_bottom + i as f64 * delta_z + s_start * cot;
        let zb = z0_bottom + i as f64 * delta_z + s_end * cot;
        let lo = za.min(zb);
        let hi = za.max(zb);
        if lo <= z_max && hi >= z_min {
            intersecting.push(i);
        }
        if lo >= z_min && hi <= z_max {
            fully_inside.push(i);
        }
    }
    (intersecting, fully_inside)
}
