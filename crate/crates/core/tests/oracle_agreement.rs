//! Agreement between the production index formulas / on-the-fly tracer and
//! the deliberately-slow reference implementations in `moc3d-oracle`.
//!
//! These live as an integration test so that both sides link against the
//! same build of the core library.

use moc3d_core::geometry::{
    Bc, BoundaryConds, CellSpec, ExtrudedGeometry, GeometrySpec, MaterialXS, RingSpec,
    ZoneMaterials,
};
use moc3d_core::quadrature::PolarQuadrature;
use moc3d_core::trace2d::generate_tracks_2d;
use moc3d_core::trace3d::{
    build_stacks, full_crossing_range, intersecting_range, trace_segments_otf, z_of,
    TrackIndex3D, ZStack, ZStackSet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn material(name: &str) -> MaterialXS {
    MaterialXS {
        name: name.into(),
        sigma_t: vec![1.0],
        sigma_s: vec![vec![0.4]],
        nu_sigma_f: vec![0.0],
        chi: vec![0.0],
    }
}

/// 2x2 lattice with one ringed pin cell, irregular axial mesh, mixed
/// boundary conditions: exercises every tracing regime at once.
fn pin_lattice_geom() -> ExtrudedGeometry {
    let mut bc = BoundaryConds::all(Bc::Reflective);
    bc.x_min = Bc::Vacuum;
    bc.z_max = Bc::Vacuum;
    ExtrudedGeometry::build(GeometrySpec {
        materials: vec![material("fuel"), material("water")],
        cells: vec![
            CellSpec {
                rings: vec![RingSpec { radius: 0.4, material: ZoneMaterials::Uniform(0) }],
                outer: ZoneMaterials::Uniform(1),
            },
            CellSpec { rings: vec![], outer: ZoneMaterials::Uniform(1) },
        ],
        lattice: vec![vec![0, 1], vec![1, 0]],
        pitch: (1.26, 1.26),
        origin: (0.0, 0.0),
        axial_planes: vec![0.0, 0.7, 1.1, 2.0],
        boundary: bc,
    })
    .unwrap()
}

fn stack(z0_bottom: f64, delta_z: f64, count: u32) -> ZStack {
    ZStack { track2d: 0, polar: 0, z0_bottom, delta_z, count }
}

fn all_track_ids(set: &ZStackSet) -> Vec<TrackIndex3D> {
    let mut out = Vec::new();
    for st in set.stacks() {
        for i in 0..st.count {
            out.push(TrackIndex3D { track2d: st.track2d, polar: st.polar, member: i });
        }
    }
    out
}

#[test]
fn ranges_match_brute_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..1500 {
        let z0: f64 = rng.gen_range(-5.0..5.0);
        let dz: f64 = rng.gen_range(0.1..2.0);
        let count: u32 = rng.gen_range(1..40);
        let cot: f64 = if case % 10 == 0 { 0.0 } else { rng.gen_range(-8.0..8.0) };
        let s0: f64 = rng.gen_range(0.0..3.0);
        let s1: f64 = s0 + rng.gen_range(0.0..3.0);
        let z_min: f64 = rng.gen_range(-6.0..20.0);
        let z_max: f64 = z_min + rng.gen_range(0.0..8.0);
        let st = stack(z0, dz, count);

        let (oracle_int, oracle_full) =
            moc3d_oracle::brute_member_ranges(z0, dz, count, cot, z_min, z_max, s0, s1);
        let (i_start, i_end) = intersecting_range(&st, cot, z_min, z_max, s0, s1);
        let (i_in, i_out) = full_crossing_range(&st, cot, z_min, z_max, s0, s1);

        let formula_int: Vec<i64> = (i_start..=i_end).collect();
        let formula_full: Vec<i64> = (i_in..=i_out).collect();
        assert_eq!(
            formula_int, oracle_int,
            "case {case}: intersecting mismatch (z0={z0}, dz={dz}, cot={cot}, \
             band=[{z_min},{z_max}], span=[{s0},{s1}])"
        );
        assert_eq!(formula_full, oracle_full, "case {case}: full-crossing mismatch");

        // Nested-range invariant whenever both are nonempty.
        if i_start <= i_end && i_in <= i_out {
            assert!(i_start <= i_in && i_out <= i_end, "case {case}: ranges not nested");
        }
    }
}

#[test]
fn otf_segments_match_brute_force_tracer() {
    let geom = pin_lattice_geom();
    let t2d = generate_tracks_2d(&geom, 8, 0.23).unwrap();
    let polar = PolarQuadrature::gauss_legendre(2).unwrap();
    let set = build_stacks(&geom, &t2d, &polar, 0.37).unwrap();
    let ids = all_track_ids(&set);
    assert!(ids.len() >= 200, "need at least 200 tracks, have {}", ids.len());
    let mut buf = Vec::new();
    for idx in ids {
        let c = set.chord(idx);
        let n = idx.polar as usize;
        let sin = set.polar().sin_theta(n);
        let cos = set.polar().cos_theta(n);
        let track = &t2d.tracks[idx.track2d as usize];
        let u = track.direction();
        let st = set.stack(idx.track2d, idx.polar);
        let origin = (
            track.entry.0 + u.0 * c.s_a,
            track.entry.1 + u.1 * c.s_a,
            z_of(st, set.polar().cot_theta(n), idx.member, c.s_a),
        );
        let dir3 = (sin * u.0, sin * u.1, cos);
        let length = (c.s_b - c.s_a) / sin;

        trace_segments_otf(&set, &geom, idx, &mut buf).unwrap();
        let brute = moc3d_oracle::trace_line_3d(&geom, origin, dir3, length);

        let got: Vec<u32> = buf.iter().map(|s| s.fsr).collect();
        let want: Vec<u32> = brute.iter().map(|&(f, _)| f).collect();
        assert_eq!(got, want, "region sequence differs on {idx:?}");
        for (s, &(_, l)) in buf.iter().zip(&brute) {
            assert!(
                (s.length - l).abs() <= 1e-12,
                "length differs on {idx:?}: {} vs {l}",
                s.length
            );
        }
    }
}
