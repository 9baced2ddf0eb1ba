//! 3-D characteristic tracks on extruded geometry.
//!
//! Every 2-D track is promoted to a family of parallel 3-D tracks per
//! polar angle — a *z-stack*: member `i` is the chord of the line
//! `z_i(s) = z0_bottom + i*delta_z + s*cot(theta)` inside the axial domain,
//! where `s` is 2-D path length along the host track. Stacks are laid on a
//! shared lattice per reflective chain so that every boundary reflection
//! and every track-to-track junction lands *exactly* on another member;
//! the one place exactness is impossible — re-entering a closed cyclic
//! chain after a full lap — is resolved by a rigid lattice rotation that
//! keeps the connection graph a perfect bijection.
//!
//! Segments are produced either on the fly ([`trace_segments_otf`]), by
//! walking the host track's 2-D segments and splitting each at axial
//! planes, or ahead of time into an [`ExplicitStore`] holding identical
//! output. The per-track memory cost of the explicit form is predictable
//! without tracing ([`estimate_track_memory`]), which is what lets a
//! scheduler split work between the two forms under a byte budget.

use crate::geometry::ExtrudedGeometry;
use crate::quadrature::PolarQuadrature;
use crate::trace2d::{segment_track_2d, Dir, Link2D, Segment2D, TrackSet2D};
use crate::{Error, Result};

/// Pieces shorter than this (in 2-D path length, cm) are treated as
/// degenerate and merged away during segment generation.
const SLIVER: f64 = 1e-13;

/// Near-integer snap width for the closed-form index-range formulas:
/// arguments within this distance of an integer are treated as exact ties
/// and resolved toward inclusion.
const INDEX_SNAP: f64 = 1e-12;

/// Looser near-integer guard used when deciding stack membership, where
/// the inputs have accumulated chain-length arithmetic; ties here are
/// corner-grazing chords of zero length and are excluded.
const MEMBER_SNAP: f64 = 1e-9;

/// Relative tolerance (in units of `delta_z`) allowed between a predicted
/// partner member index and an integer before the linkage is considered
/// broken.
const LINK_RESIDUAL: f64 = 1e-6;

// ---------------------------------------------------------------------
// Flattened jagged storage
// ---------------------------------------------------------------------

/// Three-level jagged array flattened into one payload vector: outer index
/// `i` selects a block whose start is `offsets[i]`, each block holds a
/// variable number of fixed-length inner records of `inner_len` elements,
/// and `get(i, j, k) = payload[offsets[i] + j*inner_len + k]`.
///
/// The solver uses it with `i` = 2-D track, `j` = polar angle, and a
/// 3-element record per stack, giving the segment generator a single
/// contiguous allocation to read instead of a vector of vectors.
#[derive(Debug, Clone)]
pub struct FlattenedStacks<T> {
    offsets: Vec<usize>,
    inner_len: usize,
    payload: Vec<T>,
}

impl<T: Copy> FlattenedStacks<T> {
    pub fn new(inner_len: usize) -> Self {
        assert!(inner_len > 0, "inner record length must be positive");
        FlattenedStacks { offsets: vec![0], inner_len, payload: Vec::new() }
    }

    /// Number of elements in one inner record.
    pub fn inner_len(&self) -> usize {
        self.inner_len
    }

    /// Starts a new outer block. Blocks must be filled in order.
    pub fn push_outer(&mut self) {
        self.offsets.push(self.payload.len());
    }

    /// Appends one inner record (exactly `inner_len` elements) to the most
    /// recently started outer block.
    pub fn push_inner(&mut self, record: &[T]) {
        assert_eq!(record.len(), self.inner_len, "inner record length mismatch");
        assert!(self.offsets.len() > 1, "push_outer must be called first");
        self.payload.extend_from_slice(record);
        *self.offsets.last_mut().unwrap() = self.payload.len();
    }

    pub fn num_outer(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of inner records in outer block `i`.
    pub fn num_inner(&self, i: usize) -> usize {
        (self.offsets[i + 1] - self.offsets[i]) / self.inner_len
    }

    /// Block start offsets into the payload, one per outer block plus a
    /// trailing sentinel equal to the payload length.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn payload(&self) -> &[T] {
        &self.payload
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        debug_assert!(k < self.inner_len);
        debug_assert!(j < self.num_inner(i));
        self.payload[self.offsets[i] + j * self.inner_len + k]
    }
}

// ---------------------------------------------------------------------
// Core types
// ---------------------------------------------------------------------

/// One family of parallel 3-D tracks over a single (2-D track, polar
/// angle) pair. Member `i` follows `z = z0_bottom + i*delta_z + s*cot`.
#[derive(Debug, Clone, Copy)]
pub struct ZStack {
    pub track2d: u32,
    pub polar: u16,
    /// Absolute z of member 0 at `s = 0` (may lie outside the domain; the
    /// chord is what's clipped, not the line).
    pub z0_bottom: f64,
    pub delta_z: f64,
    pub count: u32,
}

/// Identifies one 3-D track: host 2-D track, polar index, member index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrackIndex3D {
    pub track2d: u32,
    pub polar: u16,
    pub member: u32,
}

/// What a chord endpoint rests against: a 2-D track end, or the bottom or
/// top axial boundary plane. Recorded when the chord is clipped so
/// downstream linkage never re-derives it from coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndTouch {
    TwoD,
    ZLow,
    ZHigh,
}

/// The portion of a member line inside the axial domain, in 2-D path
/// length along the host track, plus what each end touches.
#[derive(Debug, Clone, Copy)]
pub struct MemberChord {
    pub s_a: f64,
    pub s_b: f64,
    pub touch_a: EndTouch,
    pub touch_b: EndTouch,
}

/// How a 3-D segment's length was determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    /// Spans its entire host 2-D segment inside one axial slab.
    Full2D,
    /// Spans a full axial slab between two plane crossings.
    FullAxial,
    /// Clipped by an axial plane on one side and a 2-D segment end, a
    /// track end, or the domain top/bottom on the other.
    Partial,
}

/// One flat-source-region crossing of a 3-D track. `length` is true 3-D
/// path length.
#[derive(Debug, Clone, Copy)]
pub struct Segment3D {
    pub fsr: u32,
    pub length: f64,
    pub kind: SegmentKind,
}

/// Where angular flux leaving a 3-D track end goes: out of the problem, or
/// into another track's incoming-flux slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkTarget {
    Terminal,
    Slot(u32),
}

/// Incoming-flux slot id for a (3-D track, traversal direction) pair.
#[inline]
pub fn flux_slot(tid: u32, dir: Dir) -> u32 {
    2 * tid
        + match dir {
            Dir::Fwd => 0,
            Dir::Bwd => 1,
        }
}

// ---------------------------------------------------------------------
// Closed-form member/slab range queries
// ---------------------------------------------------------------------

/// Height of member `i` at 2-D path position `s` (Eq. of the stack line).
#[inline]
pub fn z_of(stack: &ZStack, cot_theta: f64, i: u32, s: f64) -> f64 {
    stack.z0_bottom + i as f64 * stack.delta_z + s * cot_theta
}

/// `ceil` that treats values within [`INDEX_SNAP`] of an integer as that
/// integer, biasing boundary ties toward inclusion.
#[inline]
fn snapped_ceil(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() <= INDEX_SNAP {
        r as i64
    } else {
        x.ceil() as i64
    }
}

/// `floor` with the same tie-snapping as [`snapped_ceil`].
#[inline]
fn snapped_floor(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() <= INDEX_SNAP {
        r as i64
    } else {
        x.floor() as i64
    }
}

/// Members of `stack` whose height interval over the 2-D span
/// `[s_start, s_end]` overlaps the axial band `[z_min, z_max]` at all
/// (touching counts). Returned as `(i_start, i_end)` clamped to
/// `[0, count-1]`; the range is empty iff `i_start > i_end`.
pub fn intersecting_range(
    stack: &ZStack,
    cot_theta: f64,
    z_min: f64,
    z_max: f64,
    s_start: f64,
    s_end: f64,
) -> (i64, i64) {
    let za = stack.z0_bottom + s_start * cot_theta;
    let zb = stack.z0_bottom + s_end * cot_theta;
    let lo0 = za.min(zb);
    let hi0 = za.max(zb);
    let i_start = snapped_ceil((z_min - hi0) / stack.delta_z).max(0);
    let i_end = snapped_floor((z_max - lo0) / stack.delta_z).min(stack.count as i64 - 1);
    (i_start, i_end)
}

/// Members of `stack` whose height interval over `[s_start, s_end]` lies
/// entirely inside `[z_min, z_max]` — the members that traverse the whole
/// 2-D span within the band. Same clamping and emptiness convention as
/// [`intersecting_range`]; an empty result with a nonempty intersecting
/// range means every crossing member clips (the steep-angle regime).
pub fn full_crossing_range(
    stack: &ZStack,
    cot_theta: f64,
    z_min: f64,
    z_max: f64,
    s_start: f64,
    s_end: f64,
) -> (i64, i64) {
    let za = stack.z0_bottom + s_start * cot_theta;
    let zb = stack.z0_bottom + s_end * cot_theta;
    let lo0 = za.min(zb);
    let hi0 = za.max(zb);
    let i_in = snapped_ceil((z_min - lo0) / stack.delta_z).max(0);
    let i_out = snapped_floor((z_max - hi0) / stack.delta_z).min(stack.count as i64 - 1);
    (i_in, i_out)
}

// ---------------------------------------------------------------------
// Stack set
// ---------------------------------------------------------------------

/// All z-stacks of a problem plus everything needed to trace and connect
/// them: per-track 2-D segmentation, 3-D track numbering, and the
/// boundary-flux connection graph.
#[derive(Debug)]
pub struct ZStackSet {
    stacks: Vec<ZStack>,
    /// Flattened mirror of the stack parameters: outer = 2-D track,
    /// inner = polar angle, record = [z0_bottom, delta_z, count].
    flat: FlattenedStacks<f64>,
    polar: PolarQuadrature,
    /// First 3-D track id of each stack (prefix sums; one trailing total).
    first3d: Vec<u32>,
    /// Outgoing link per (3-D track, direction), indexed by `flux_slot`.
    links: Vec<LinkTarget>,
    /// 2-D segmentation per host track.
    seg2d: Vec<Vec<Segment2D>>,
    track_len: Vec<f64>,
    /// Lattice spacing along z per polar pair (indexed by upward index).
    pair_delta_z: Vec<f64>,
    /// Lattice lines per unfolded period 2H, per polar pair.
    pair_period: Vec<u32>,
    axial_spacing: f64,
    z_min: f64,
    z_max: f64,
}

impl ZStackSet {
    pub fn stacks(&self) -> &[ZStack] {
        &self.stacks
    }

    pub fn polar(&self) -> &PolarQuadrature {
        &self.polar
    }

    pub fn flat(&self) -> &FlattenedStacks<f64> {
        &self.flat
    }

    pub fn axial_spacing(&self) -> f64 {
        self.axial_spacing
    }

    #[inline]
    pub fn stack_index(&self, track2d: u32, polar: u16) -> usize {
        track2d as usize * self.polar.len() + polar as usize
    }

    #[inline]
    pub fn stack(&self, track2d: u32, polar: u16) -> &ZStack {
        &self.stacks[self.stack_index(track2d, polar)]
    }

    pub fn num_tracks_3d(&self) -> usize {
        *self.first3d.last().unwrap() as usize
    }

    /// Global 3-D track id of a (track, polar, member) triple.
    #[inline]
    pub fn tid3(&self, idx: TrackIndex3D) -> u32 {
        let sid = self.stack_index(idx.track2d, idx.polar);
        debug_assert!(idx.member < self.stacks[sid].count);
        self.first3d[sid] + idx.member
    }

    /// Inverse of [`Self::tid3`].
    pub fn locate(&self, tid: u32) -> TrackIndex3D {
        let sid = self.first3d.partition_point(|&f| f <= tid) - 1;
        TrackIndex3D {
            track2d: (sid / self.polar.len()) as u32,
            polar: (sid % self.polar.len()) as u16,
            member: tid - self.first3d[sid],
        }
    }

    /// Number of members in the stack of (track, polar).
    pub fn member_count(&self, track2d: u32, polar: u16) -> u32 {
        self.stack(track2d, polar).count
    }

    /// 2-D path-length extent and end classification of one member.
    pub fn chord(&self, idx: TrackIndex3D) -> MemberChord {
        let stack = self.stack(idx.track2d, idx.polar);
        let cot = self.polar.cot_theta(idx.polar as usize);
        member_chord(
            stack,
            cot,
            self.track_len[idx.track2d as usize],
            self.z_min,
            self.z_max,
            idx.member,
        )
    }

    /// Outgoing link of a (3-D track, traversal direction).
    #[inline]
    pub fn out_link(&self, tid: u32, dir: Dir) -> LinkTarget {
        self.links[flux_slot(tid, dir) as usize]
    }

    pub fn seg2d(&self, track2d: u32) -> &[Segment2D] {
        &self.seg2d[track2d as usize]
    }

    pub fn track_len(&self, track2d: u32) -> f64 {
        self.track_len[track2d as usize]
    }

    pub fn delta_z_of_pair(&self, pair: usize) -> f64 {
        self.pair_delta_z[pair]
    }

    pub fn z_bounds(&self) -> (f64, f64) {
        (self.z_min, self.z_max)
    }
}

/// Clips member `i` of `stack` against the axial domain `[z_min, z_max]`,
/// recording which surface each endpoint rests on. `track_len` is the host
/// 2-D track's length.
pub fn member_chord(
    stack: &ZStack,
    cot: f64,
    track_len: f64,
    z_min: f64,
    z_max: f64,
    i: u32,
) -> MemberChord {
    let z0i = stack.z0_bottom + i as f64 * stack.delta_z;
    if cot > 0.0 {
        let s_lo = (z_min - z0i) / cot;
        let s_hi = (z_max - z0i) / cot;
        let (s_a, touch_a) =
            if s_lo > 0.0 { (s_lo, EndTouch::ZLow) } else { (0.0, EndTouch::TwoD) };
        let (s_b, touch_b) =
            if s_hi < track_len { (s_hi, EndTouch::ZHigh) } else { (track_len, EndTouch::TwoD) };
        MemberChord { s_a, s_b, touch_a, touch_b }
    } else if cot < 0.0 {
        let s_hi = (z_max - z0i) / cot;
        let s_lo = (z_min - z0i) / cot;
        let (s_a, touch_a) =
            if s_hi > 0.0 { (s_hi, EndTouch::ZHigh) } else { (0.0, EndTouch::TwoD) };
        let (s_b, touch_b) =
            if s_lo < track_len { (s_lo, EndTouch::ZLow) } else { (track_len, EndTouch::TwoD) };
        MemberChord { s_a, s_b, touch_a, touch_b }
    } else {
        MemberChord { s_a: 0.0, s_b: track_len, touch_a: EndTouch::TwoD, touch_b: EndTouch::TwoD }
    }
}

/// Strict lower index bound: smallest integer k with `k > x`, snapping
/// near-ties to exclusion (a line exactly grazing a corner has a
/// zero-length chord and is not a member).
fn strict_above(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() <= MEMBER_SNAP {
        r as i64 + 1
    } else {
        x.ceil() as i64
    }
}

/// Strict upper index bound: largest integer k with `k < x`.
fn strict_below(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() <= MEMBER_SNAP {
        r as i64 - 1
    } else {
        x.floor() as i64
    }
}

/// Builds every z-stack for the given 2-D track set and polar quadrature.
///
/// Per polar pair the z lattice spacing is the track's axial spacing
/// projected through the polar angle (`axial_spacing / sin(theta)`) and
/// then snapped so an integer number of lattice lines fits the unfolded
/// period `2H`; that snap is what makes axial reflections land exactly on
/// other members. Lattices are anchored per reflective chain with a half
/// spacing offset, so junction-to-junction continuations are exact too.
pub fn build_stacks(
    geom: &ExtrudedGeometry,
    t2d: &TrackSet2D,
    polar: &PolarQuadrature,
    axial_spacing: f64,
) -> Result<ZStackSet> {
    if !(axial_spacing > 0.0) || !axial_spacing.is_finite() {
        return Err(Error::Parameter(format!(
            "axial track spacing must be positive and finite, got {axial_spacing}"
        )));
    }
    let z_min = geom.mesh().z_min();
    let z_max = geom.mesh().z_max();
    let height = z_max - z_min;
    let two_h = 2.0 * height;
    let n_polar = polar.len();
    let n_pairs = polar.per_hemisphere();

    // Lattice parameters per polar pair.
    let mut pair_delta_z = Vec::with_capacity(n_pairs);
    let mut pair_period = Vec::with_capacity(n_pairs);
    for p in 0..n_pairs {
        let sin = polar.sin_theta(p);
        let period = ((two_h * sin / axial_spacing).round() as i64).max(1) as u32;
        pair_period.push(period);
        pair_delta_z.push(two_h / period as f64);
    }

    // Stack parameters, one per (track, polar) in track-major order.
    let mut stacks = Vec::with_capacity(t2d.num_tracks() * n_polar);
    let mut flat = FlattenedStacks::new(3);
    let mut first3d = Vec::with_capacity(t2d.num_tracks() * n_polar + 1);
    let mut next_tid: u32 = 0;

    for track in &t2d.tracks {
        let pos = t2d.chain_pos[track.id as usize];
        let s_len = track.length;
        flat.push_outer();
        for n in 0..n_polar {
            let pair = if polar.is_upward(n) { n } else { polar.mirror(n) };
            let cot_up = polar.cot_theta(pair);
            let dz = pair_delta_z[pair];
            let cot_n = polar.cot_theta(n);
            // Lattice offset of this stack's lines at local s = 0, from
            // the chain-anchored lattice (half-spacing offset at chain
            // start, unfolded over 2H).
            let raw = match (pos.forward, polar.is_upward(n)) {
                (true, true) => 0.5 * dz + pos.l_start * cot_up,
                (true, false) => -0.5 * dz - pos.l_start * cot_up,
                (false, true) => -0.5 * dz - (pos.l_start + s_len) * cot_up,
                (false, false) => 0.5 * dz + (pos.l_start + s_len) * cot_up,
            };
            let alpha = raw.rem_euclid(dz);
            // Members are lattice lines whose chord inside (0, H) x [0, S]
            // is non-degenerate (strict interval overlap).
            let drift = s_len * cot_n;
            let k_min = strict_above((-alpha - drift.max(0.0)) / dz);
            let k_max = strict_below((height - alpha - drift.min(0.0)) / dz);
            let count = (k_max - k_min + 1).max(0) as u32;
            let z0_bottom = z_min + alpha + k_min as f64 * dz;
            stacks.push(ZStack {
                track2d: track.id,
                polar: n as u16,
                z0_bottom,
                delta_z: dz,
                count,
            });
            flat.push_inner(&[z0_bottom, dz, count as f64]);
            first3d.push(next_tid);
            next_tid += count;
        }
    }
    first3d.push(next_tid);

    // 2-D segmentation, shared by every polar angle of a track.
    let mut seg2d = Vec::with_capacity(t2d.num_tracks());
    let mut track_len = Vec::with_capacity(t2d.num_tracks());
    for track in &t2d.tracks {
        seg2d.push(segment_track_2d(geom, track)?);
        track_len.push(track.length);
    }

    let mut set = ZStackSet {
        stacks,
        flat,
        polar: polar.clone(),
        first3d,
        links: Vec::new(),
        seg2d,
        track_len,
        pair_delta_z,
        pair_period,
        axial_spacing,
        z_min,
        z_max,
    };
    build_links(geom, t2d, &mut set)?;
    Ok(set)
}

/// Resolves the outgoing link of every (3-D track, direction) pair.
fn build_links(geom: &ExtrudedGeometry, t2d: &TrackSet2D, set: &mut ZStackSet) -> Result<()> {
    let num3d = set.num_tracks_3d();
    let mut links = vec![LinkTarget::Terminal; 2 * num3d];
    let bc = geom.boundary();
    let polar = set.polar.clone();

    for sid in 0..set.stacks.len() {
        let stack = set.stacks[sid];
        let t = stack.track2d;
        let n = stack.polar as usize;
        let cot = polar.cot_theta(n);
        let s_len = set.track_len[t as usize];
        for i in 0..stack.count {
            let tid = set.first3d[sid] + i;
            let chord = member_chord(&stack, cot, s_len, set.z_min, set.z_max, i);
            for dir in [Dir::Fwd, Dir::Bwd] {
                let (s_exit, touch) = match dir {
                    Dir::Fwd => (chord.s_b, chord.touch_b),
                    Dir::Bwd => (chord.s_a, chord.touch_a),
                };
                let target = match touch {
                    EndTouch::ZLow => {
                        if bc.z_min == crate::geometry::Bc::Vacuum {
                            LinkTarget::Terminal
                        } else {
                            axial_reflect_link(set, t2d, &polar, &stack, dir, s_exit, set.z_min)
                        }
                    }
                    EndTouch::ZHigh => {
                        if bc.z_max == crate::geometry::Bc::Vacuum {
                            LinkTarget::Terminal
                        } else {
                            axial_reflect_link(set, t2d, &polar, &stack, dir, s_exit, set.z_max)
                        }
                    }
                    EndTouch::TwoD => {
                        match t2d.tracks[t as usize].link(dir) {
                            Link2D::Vacuum(_) => LinkTarget::Terminal,
                            Link2D::Reflect { track: t2, dir: d2 } => side_reflect_link(
                                set, t2d, &polar, &stack, i, dir, s_exit, t2, d2,
                            ),
                        }
                    }
                };
                links[flux_slot(tid, dir) as usize] = target;
            }
        }
    }
    set.links = links;
    Ok(())
}

/// Link for a chord end resting on the bottom or top axial plane under a
/// reflective condition: same 2-D track, mirrored polar angle, same
/// traversal direction; the partner member is the lattice line through the
/// exact reflection point.
///
/// When that partner does not exist it was dropped as a corner sliver —
/// the reflection point sits within a hair of a 2-D track end — so the
/// reflected ray crosses the 2-D junction essentially immediately and the
/// link resolves one hop further: onto the member of the junction partner
/// track that passes through the same corner point, still moving away
/// from the reflecting plane.
fn axial_reflect_link(
    set: &ZStackSet,
    t2d: &TrackSet2D,
    polar: &PolarQuadrature,
    stack: &ZStack,
    dir: Dir,
    s_exit: f64,
    z_plane: f64,
) -> LinkTarget {
    let n = stack.polar as usize;
    let n2 = polar.mirror(n);
    let sid2 = set.stack_index(stack.track2d, n2 as u16);
    let st2 = &set.stacks[sid2];
    let cot2 = polar.cot_theta(n2);
    let i_real = (z_plane - st2.z0_bottom - s_exit * cot2) / st2.delta_z;
    let i2 = i_real.round();
    debug_assert!(
        (i_real - i2).abs() <= LINK_RESIDUAL,
        "axial reflection off-lattice: residual {}",
        (i_real - i2).abs()
    );
    if i2 >= 0.0 && (i2 as u32) < st2.count {
        let tid2 = set.first3d[sid2] + i2 as u32;
        return LinkTarget::Slot(flux_slot(tid2, dir));
    }

    // Corner sliver: the mirrored member's 2-D extent past `s_exit` was
    // below the inclusion threshold. The 2-D junction ahead must be right
    // at the reflection point.
    let t = stack.track2d;
    let s_len = set.track_len[t as usize];
    let s_ahead = if dir == Dir::Fwd { s_len } else { 0.0 };
    debug_assert!(
        (s_ahead - s_exit).abs() <= 1e-6,
        "axial partner missing away from any 2-D junction (s_exit {s_exit}, end {s_ahead})"
    );
    match t2d.tracks[t as usize].link(dir) {
        Link2D::Vacuum(_) => LinkTarget::Terminal,
        Link2D::Reflect { track: t3, dir: d3 } => {
            // Continue on the junction partner, moving away from the plane:
            // upward in local s if (forward travel) == (bottom plane).
            let at_bottom = z_plane == set.z_min;
            let pair = if polar.is_upward(n) { n } else { polar.mirror(n) };
            let want_up = (d3 == Dir::Fwd) == at_bottom;
            let n3 = if want_up { pair } else { polar.mirror(pair) };
            let sid3 = set.stack_index(t3, n3 as u16);
            let st3 = &set.stacks[sid3];
            let cot3 = polar.cot_theta(n3);
            let s3_entry = if d3 == Dir::Fwd { 0.0 } else { set.track_len[t3 as usize] };
            // Rounding here also absorbs the rigid lattice rotation at a
            // closed-chain seam, so no tight residual holds in general.
            let i3 = ((z_plane - st3.z0_bottom - s3_entry * cot3) / st3.delta_z).round();
            if i3 >= 0.0 && (i3 as u32) < st3.count {
                let tid3 = set.first3d[sid3] + i3 as u32;
                return LinkTarget::Slot(flux_slot(tid3, d3));
            }
            debug_assert!(false, "axial corner continuation has no valid member");
            let i3 = (i3 as i64).clamp(0, st3.count as i64 - 1) as u32;
            LinkTarget::Slot(flux_slot(set.first3d[sid3] + i3, d3))
        }
    }
}

/// Link for a chord end resting on a 2-D track end whose 2-D link reflects
/// into `(t2, d2)`. Resolution goes through the chain's unfolded lattice:
/// the arrival height is converted to an unfolded lattice line index at
/// the junction's chain position, rounded (exact everywhere except when
/// wrapping a closed chain, where the rounding realizes the rigid lattice
/// rotation), and converted back to the partner (polar, member).
#[allow(clippy::too_many_arguments)]
fn side_reflect_link(
    set: &ZStackSet,
    t2d: &TrackSet2D,
    polar: &PolarQuadrature,
    stack: &ZStack,
    i: u32,
    dir: Dir,
    s_exit: f64,
    t2: u32,
    d2: Dir,
) -> LinkTarget {
    let n = stack.polar as usize;
    let pair = if polar.is_upward(n) { n } else { polar.mirror(n) };
    let cot_up = polar.cot_theta(pair);
    let dz = set.pair_delta_z[pair];
    let period = set.pair_period[pair] as i64;
    let height = set.z_max - set.z_min;
    let two_h = 2.0 * height;

    // Physical height at the junction (domain-local coordinates).
    let cot = polar.cot_theta(n);
    let zeta = z_of(stack, cot, i, s_exit) - set.z_min;

    // z-slope of travel per unit 2-D path, then per unit of the partner
    // chain coordinate; the partner side is authoritative so the formula
    // also covers links joining different chains.
    let dz_dtau = if dir == Dir::Fwd { cot } else { -cot };
    let pos2 = t2d.chain_pos[t2 as usize];
    let chain_fwd2 = (d2 == Dir::Fwd) == pos2.forward;
    let slope_chain = if chain_fwd2 { dz_dtau } else { -dz_dtau };

    // Unfolded height over the period 2H: rising branch keeps zeta,
    // falling branch is its mirror image.
    let rep = if slope_chain >= 0.0 { zeta } else { two_h - zeta };

    // Partner entry point in its chain coordinate.
    let s2_len = set.track_len[t2 as usize];
    let s2_entry = if d2 == Dir::Fwd { 0.0 } else { s2_len };
    let l2 = pos2.l_start + if pos2.forward { s2_entry } else { s2_len - s2_entry };

    // Nearest unfolded lattice line; exact at ordinary junctions, a rigid
    // rotation at closed-chain seams.
    let j = ((rep - 0.5 * dz - l2 * cot_up) / dz).round() as i64;
    let jm = j.rem_euclid(period);
    let rep2 = (0.5 * dz + jm as f64 * dz + l2 * cot_up).rem_euclid(two_h);

    // Resolve the unfolded height to a concrete (polar branch, member).
    // The first attempt takes the branch as computed. If that member does
    // not exist, it was dropped as a corner sliver — the chord would peek
    // past an axial plane by a hair before leaving the 2-D span — so the
    // ray reflects off that plane essentially at the junction and continues
    // on the mirrored branch instead.
    let mut fallback = None;
    for rep_try in [rep2, (two_h - rep2).rem_euclid(two_h)] {
        let rising = rep_try < height;
        let zeta2 = if rising { rep_try } else { two_h - rep_try };
        let slope2_chain = if rising { cot_up } else { -cot_up };

        // Convert the chain-coordinate slope back to the partner's local
        // s-axis to pick its polar index.
        let cot_local = if pos2.forward { slope2_chain } else { -slope2_chain };
        let n2 = if cot_local > 0.0 { pair } else { polar.mirror(pair) };

        let sid2 = set.stack_index(t2, n2 as u16);
        let st2 = &set.stacks[sid2];
        let cot2 = polar.cot_theta(n2);
        let i_real = (set.z_min + zeta2 - st2.z0_bottom - s2_entry * cot2) / st2.delta_z;
        let i2r = i_real.round();
        debug_assert!(
            (i_real - i2r).abs() <= LINK_RESIDUAL,
            "junction continuation off-lattice: residual {}",
            (i_real - i2r).abs()
        );
        if i2r >= 0.0 && (i2r as u32) < st2.count {
            let tid2 = set.first3d[sid2] + i2r as u32;
            return LinkTarget::Slot(flux_slot(tid2, d2));
        }
        if fallback.is_none() {
            let i2 = (i2r as i64).clamp(0, st2.count as i64 - 1) as u32;
            fallback = Some(LinkTarget::Slot(flux_slot(set.first3d[sid2] + i2, d2)));
        }
    }
    debug_assert!(false, "junction continuation has no valid partner member");
    fallback.unwrap()
}

// ---------------------------------------------------------------------
// Segment generation
// ---------------------------------------------------------------------

/// Walks the chord of one member across its host track's 2-D segments,
/// splitting at axial plane crossings, and hands every piece (with its
/// classification) to `f` in order of increasing `s`. Both the on-the-fly
/// tracer and the byte estimator run on this single enumeration, which is
/// what guarantees the estimate always matches what a trace would emit.
fn walk_chord_pieces(
    planes: &[f64],
    z0i: f64,
    cot: f64,
    segs: &[Segment2D],
    s_a: f64,
    s_b: f64,
    f: &mut impl FnMut(usize, f64, f64, SegmentKind),
) {
    for seg in segs {
        if seg.s_end <= s_a {
            continue;
        }
        if seg.s_start >= s_b {
            break;
        }
        let a = if seg.s_start > s_a { seg.s_start } else { s_a };
        let b = if seg.s_end < s_b { seg.s_end } else { s_b };
        if b - a <= SLIVER {
            continue;
        }
        let za = z0i + cot * a;
        let zb = z0i + cot * b;

        let mut p0 = a;
        let mut left_is_crossing = false;
        if cot > 0.0 {
            // Planes strictly inside (za, zb), ascending.
            let lo = planes.partition_point(|&p| p <= za);
            let hi = planes.partition_point(|&p| p < zb);
            for k in lo..hi {
                let s_k = a + (planes[k] - za) / cot;
                if s_k <= p0 + SLIVER || s_k >= b - SLIVER {
                    continue;
                }
                let kind =
                    if left_is_crossing { SegmentKind::FullAxial } else { SegmentKind::Partial };
                f(seg.region, p0, s_k, kind);
                p0 = s_k;
                left_is_crossing = true;
            }
        } else if cot < 0.0 {
            // Planes strictly inside (zb, za), walked downward so s grows.
            let lo = planes.partition_point(|&p| p <= zb);
            let hi = planes.partition_point(|&p| p < za);
            for k in (lo..hi).rev() {
                let s_k = a + (planes[k] - za) / cot;
                if s_k <= p0 + SLIVER || s_k >= b - SLIVER {
                    continue;
                }
                let kind =
                    if left_is_crossing { SegmentKind::FullAxial } else { SegmentKind::Partial };
                f(seg.region, p0, s_k, kind);
                p0 = s_k;
                left_is_crossing = true;
            }
        }
        let kind = if left_is_crossing {
            SegmentKind::Partial
        } else if p0 == seg.s_start && b == seg.s_end {
            SegmentKind::Full2D
        } else {
            SegmentKind::Partial
        };
        f(seg.region, p0, b, kind);
    }
}

/// Generates the 3-D segments of one track on the fly into `out`
/// (cleared first), ordered along the forward traversal. Stack parameters
/// are read through the flattened mirror — the same access pattern a
/// memory-constrained sweep uses.
pub fn trace_segments_otf(
    set: &ZStackSet,
    geom: &ExtrudedGeometry,
    idx: TrackIndex3D,
    out: &mut Vec<Segment3D>,
) -> Result<()> {
    out.clear();
    let t = idx.track2d as usize;
    let n = idx.polar as usize;
    let flat = &set.flat;
    let z0_bottom = flat.get(t, n, 0);
    let delta_z = flat.get(t, n, 1);
    debug_assert!((idx.member as f64) < flat.get(t, n, 2));

    let cot = set.polar.cot_theta(n);
    let sin = set.polar.sin_theta(n);
    let inv_sin = 1.0 / sin;
    let abs_cos = set.polar.cos_theta(n).abs();
    let stack = ZStack {
        track2d: idx.track2d,
        polar: idx.polar,
        z0_bottom,
        delta_z,
        count: u32::MAX, // unused by chord clipping
    };
    let chord =
        member_chord(&stack, cot, set.track_len[t], set.z_min, set.z_max, idx.member);
    let z0i = z0_bottom + idx.member as f64 * delta_z;

    let mesh = geom.mesh();
    let planes = mesh.planes();
    let mut failure: Option<String> = None;
    walk_chord_pieces(planes, z0i, cot, &set.seg2d[t], chord.s_a, chord.s_b, &mut |region,
                                                                                   p0,
                                                                                   p1,
                                                                                   kind| {
        if failure.is_some() {
            return;
        }
        let zm = z0i + cot * 0.5 * (p0 + p1);
        let slab = match mesh.slab_of(zm) {
            Ok(s) => s,
            Err(_) => {
                failure = Some(format!("segment midpoint z={zm} left the axial mesh"));
                return;
            }
        };
        let length = match kind {
            SegmentKind::FullAxial => {
                let (lo, hi) = mesh.slab_bounds(slab);
                (hi - lo) / abs_cos
            }
            _ => (p1 - p0) * inv_sin,
        };
        out.push(Segment3D { fsr: geom.fsr_index(region, slab) as u32, length, kind });
    });
    if let Some(msg) = failure {
        return Err(Error::Tracing { track: set.tid3(idx) as usize, msg });
    }
    Ok(())
}

/// Bytes one track's segments would occupy in an [`ExplicitStore`]
/// (12 bytes per segment: 32-bit region id + 64-bit length), computed by
/// running the shared piece enumeration without classifying regions.
pub fn estimate_track_memory(set: &ZStackSet, geom: &ExtrudedGeometry, idx: TrackIndex3D) -> u64 {
    let t = idx.track2d as usize;
    let n = idx.polar as usize;
    let stack = set.stack(idx.track2d, idx.polar);
    let cot = set.polar.cot_theta(n);
    let chord =
        member_chord(stack, cot, set.track_len[t], set.z_min, set.z_max, idx.member);
    let z0i = stack.z0_bottom + idx.member as f64 * stack.delta_z;
    let mut count: u64 = 0;
    walk_chord_pieces(
        geom.mesh().planes(),
        z0i,
        cot,
        &set.seg2d[t],
        chord.s_a,
        chord.s_b,
        &mut |_, _, _, _| count += 1,
    );
    12 * count
}

/// Pre-generated segments for a subset of 3-D tracks: the explicit
/// counterpart to on-the-fly tracing, holding bit-identical lengths in
/// 12-byte records (32-bit region id + 64-bit length).
#[derive(Debug)]
pub struct ExplicitStore {
    /// Record range per global 3-D track id; `u32::MAX` start = absent.
    starts: Vec<u32>,
    ends: Vec<u32>,
    fsr: Vec<u32>,
    len: Vec<f64>,
}

impl ExplicitStore {
    /// Segment record arrays for a stored track, or `None` if the track
    /// was not preloaded.
    #[inline]
    pub fn get(&self, tid: u32) -> Option<(&[u32], &[f64])> {
        let s = self.starts[tid as usize];
        if s == u32::MAX {
            return None;
        }
        let e = self.ends[tid as usize];
        Some((&self.fsr[s as usize..e as usize], &self.len[s as usize..e as usize]))
    }

    pub fn contains(&self, tid: u32) -> bool {
        self.starts[tid as usize] != u32::MAX
    }

    pub fn num_segments(&self) -> usize {
        self.fsr.len()
    }

    /// Payload size counted against the memory budget.
    pub fn memory_bytes(&self) -> u64 {
        12 * self.fsr.len() as u64
    }
}

/// Traces `tids` once and stores their segments. When a byte budget is
/// given, the predicted size is checked *before* any tracing happens and
/// exceeding it is an error — the caller decides what to preload, this
/// function only enforces the contract.
pub fn build_explicit(
    set: &ZStackSet,
    geom: &ExtrudedGeometry,
    tids: &[TrackIndex3D],
    budget: Option<u64>,
) -> Result<ExplicitStore> {
    let needed: u64 = tids.iter().map(|&idx| estimate_track_memory(set, geom, idx)).sum();
    if let Some(budget) = budget {
        if needed > budget {
            return Err(Error::Capacity { needed, budget });
        }
    }
    let num3d = set.num_tracks_3d();
    let mut store = ExplicitStore {
        starts: vec![u32::MAX; num3d],
        ends: vec![0; num3d],
        fsr: Vec::with_capacity((needed / 12) as usize),
        len: Vec::with_capacity((needed / 12) as usize),
    };
    let mut buf = Vec::new();
    for &idx in tids {
        let tid = set.tid3(idx) as usize;
        trace_segments_otf(set, geom, idx, &mut buf)?;
        store.starts[tid] = store.fsr.len() as u32;
        for seg in &buf {
            store.fsr.push(seg.fsr);
            store.len.push(seg.length);
        }
        store.ends[tid] = store.fsr.len() as u32;
    }
    debug_assert_eq!(store.memory_bytes(), needed);
    Ok(store)
}

/// Flat-source-region volumes as the transport sweep sees them: for every
/// 3-D track, accumulate (angle weight) x (track cross-section area) x
/// (segment length) / (4 pi), counting both travel directions. Converges
/// to the analytic volumes as track spacing shrinks; the residual error is
/// exactly the discretization the sweep itself experiences.
pub fn compute_track_volumes(
    set: &ZStackSet,
    geom: &ExtrudedGeometry,
    t2d: &TrackSet2D,
) -> Result<Vec<f64>> {
    let mut vol = vec![0.0; geom.num_fsrs()];
    let polar = set.polar();
    let mut buf = Vec::new();
    for stack in set.stacks() {
        if stack.count == 0 {
            continue;
        }
        let m = t2d.tracks[stack.track2d as usize].azim as usize;
        let n = stack.polar as usize;
        // total_weight = 4*pi * azim_weight * polar_fraction per travel
        // direction; both directions double it, and the 4*pi cancels the
        // normalization of the volume estimate.
        let coef = 2.0
            * t2d.azimuthal.weight[m]
            * polar.fraction(n)
            * t2d.azimuthal.spacing[m]
            * stack.delta_z
            * polar.sin_theta(n);
        for i in 0..stack.count {
            let idx = TrackIndex3D { track2d: stack.track2d, polar: stack.polar, member: i };
            trace_segments_otf(set, geom, idx, &mut buf)?;
            for seg in &buf {
                vol[seg.fsr as usize] += coef * seg.length;
            }
        }
    }
    Ok(vol)
}
