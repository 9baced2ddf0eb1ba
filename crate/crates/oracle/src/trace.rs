//! Brute-force 3-D ray tracing through an extruded lattice geometry.
//!
//! Instead of walking the geometry incrementally, this tracer intersects
//! the ray against **every** surface in the problem — all lattice x/y
//! planes, every ring cylinder of every cell, and every axial plane —
//! sorts the hit parameters, and classifies each gap by its midpoint.
//! Consecutive pieces that land in the same flat-source region are merged.
//! O(surfaces · log) per ray and immune to bookkeeping mistakes, which is
//! the point.

use moc3d_core::geometry::ExtrudedGeometry;

/// Traces the segment from `origin` along the unit vector `dir` for
/// `length` (3-D path length), returning `(fsr, length)` pieces in order
/// of travel. Coincident surface hits are deduplicated at `1e-12` and
/// the resulting slivers dropped.
pub fn trace_line_3d(
    geom: &ExtrudedGeometry,
    origin: (f64, f64, f64),
    dir: (f64, f64, f64),
    length: f64,
) -> Vec<(u32, f64)> {
    let (x0, y0, z0) = origin;
    let (ox, oy, oz) = dir;
    let (gx0, _gx1, gy0, _gy1) = geom.radial_extent();
    let (nx, ny) = geom.lattice_shape();
    let (px, py) = geom.pitch();

    let mut hits: Vec<f64> = Vec::new();
    let mut push = |t: f64| {
        if t > 1e-12 && t < length - 1e-12 {
            hits.push(t);
        }
    };

    // Lattice planes normal to x and y.
    if ox.abs() > 1e-15 {
        for i in 0..=nx {
            push((gx0 + i as f64 * px - x0) / ox);
        }
    }
    if oy.abs() > 1e-15 {
        for j in 0..=ny {
            push((gy0 + j as f64 * py - y0) / oy);
        }
    }

    // Axial planes.
    if oz.abs() > 1e-15 {
        for &p in geom.mesh().planes() {
            push((p - z0) / oz);
        }
    }

    // Every ring cylinder of every lattice slot, regardless of whether the
    // ray passes near it — spurious candidates are harmless because the
    // midpoint classification decides region membership.
    let a = ox * ox + oy * oy;
    if a > 1e-30 {
        for iy in 0..ny {
            for ix in 0..nx {
                let cx = gx0 + (ix as f64 + 0.5) * px;
                let cy = gy0 + (iy as f64 + 0.5) * py;
                for r in geom.ring_radii_at(ix, iy) {
                    let dx = x0 - cx;
                    let dy = y0 - cy;
                    let b = 2.0 * (dx * ox + dy * oy);
                    let c = dx * dx + dy * dy - r * r;
                    let disc = b * b - 4.0 * a * c;
                    if disc > 0.0 {
                        let sq = disc.sqrt();
                        push((-b - sq) / (2.0 * a));
                        push((-b + sq) / (2.0 * a));
                    }
                }
            }
        }
    }

    hits.sort_by(|p, q| p.partial_cmp(q).unwrap());
    hits.dedup_by(|p, q| (*p - *q).abs() <= 1e-12);

    let mut bounds = Vec::with_capacity(hits.len() + 2);
    bounds.push(0.0);
    bounds.extend_from_slice(&hits);
    bounds.push(length);

    let mut out: Vec<(u32, f64)> = Vec::new();
    for w in bounds.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        if tb - ta <= 1e-12 {
            continue;
        }
        let tm = 0.5 * (ta + tb);
        let (xm, ym, zm) = (x0 + tm * ox, y0 + tm * oy, z0 + tm * oz);
        // Exhaustive containment scan instead of the production point
        // lookup: no tie-break nudges, so even slivers classify correctly.
        let region = (0..geom.num_radial_regions())
            .find(|&r| geom.region_contains(r, xm, ym))
            .expect("oracle ray midpoint in no radial region");
        let slab = geom.mesh().slab_of(zm).expect("oracle ray midpoint outside axial mesh");
        let fsr = geom.fsr_index(region, slab) as u32;
        let len = tb - ta;
        match out.last_mut() {
            Some(last) if last.0 == fsr => last.1 += len,
            _ => out.push((fsr, len)),
        }
    }
    out
}
