//! Track scheduling: canonical packing of 3D track ids, budget-driven
//! partitioning between preloaded and on-the-fly tracks, serpentine load
//! balancing, and a data-parallel executor whose tallies are merged in a
//! fixed order so results do not depend on the worker count.

use crate::trace3d::ZStackSet;
use crate::{Error, Result};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

/// Canonical packed ordering of 3D track ids: 2D track ascending, polar
/// index ascending, stack member ascending. Track ids are assigned in this
/// same order, so the result is `0..num_tracks_3d`, but it is derived by
/// enumeration rather than assumed.
pub fn pack_track_indices(set: &ZStackSet) -> Vec<u32> {
    let mut order = Vec::with_capacity(set.num_tracks_3d());
    for stack in set.stacks() {
        for member in 0..stack.count {
            let idx = crate::trace3d::TrackIndex3D {
                track2d: stack.track2d,
                polar: stack.polar,
                member,
            };
            order.push(set.tid3(idx));
        }
    }
    debug_assert!(order.windows(2).all(|w| w[0] < w[1]));
    order
}

/// Splits tracks between explicit preload and on-the-fly generation under a
/// byte budget. Tracks are considered heaviest-first (stable, so ties keep
/// packed order) and accepted while they fit within `fraction * budget`;
/// the first track that does not fit stops the scan — nothing after it is
/// preloaded even if it would fit. Returns (preload, on-the-fly), both
/// sorted by track id.
pub fn partition_exp_otf(
    estimates: &[u64],
    budget: u64,
    fraction: f64,
) -> (Vec<u32>, Vec<u32>) {
    let cap = (budget as f64 * fraction) as u64;
    let mut by_size: Vec<u32> = (0..estimates.len() as u32).collect();
    by_size.sort_by(|&a, &b| estimates[b as usize].cmp(&estimates[a as usize]));

    let mut preload = Vec::new();
    let mut cum = 0u64;
    let mut cut = estimates.len();
    for (pos, &tid) in by_size.iter().enumerate() {
        let e = estimates[tid as usize];
        if cum + e > cap {
            cut = pos;
            break;
        }
        cum += e;
        preload.push(tid);
    }
    let mut otf: Vec<u32> = by_size[cut..].to_vec();
    preload.sort_unstable();
    otf.sort_unstable();
    (preload, otf)
}

/// Load-balancing order: sort heaviest-first (stable), then reverse every
/// odd-indexed chunk so that the systematic "worker 0 always draws the
/// largest of its stride" bias alternates sides and cancels.
pub fn serpentine_order(weights: &[u64], chunk: usize) -> Vec<u32> {
    let chunk = chunk.max(1);
    let mut order: Vec<u32> = (0..weights.len() as u32).collect();
    order.sort_by(|&a, &b| weights[b as usize].cmp(&weights[a as usize]));
    for (c, block) in order.chunks_mut(chunk).enumerate() {
        if c % 2 == 1 {
            block.reverse();
        }
    }
    order
}

/// Runs `body` over every id in `order` using one thread per worker state.
/// Worker `w` takes positions `w, w + W, w + 2W, ...` of the order (grid
/// stride). A panic in `body` aborts the run and is reported as an
/// execution error carrying the worker index and, via `resolve`, the
/// (2D track, polar, member) triple of the offending track.
pub fn execute<W, F, R>(order: &[u32], states: &mut [W], body: F, resolve: R) -> Result<()>
where
    W: Send,
    F: Fn(&mut W, u32) + Sync,
    R: Fn(u32) -> Option<(u32, u16, u32)>,
{
    let num_workers = states.len();
    assert!(num_workers > 0, "execute requires at least one worker state");
    let abort = AtomicBool::new(false);
    let failure: Mutex<Option<(usize, u32)>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for (w, state) in states.iter_mut().enumerate() {
            let abort = &abort;
            let failure = &failure;
            let body = &body;
            scope.spawn(move || {
                let mut pos = w;
                while pos < order.len() {
                    if abort.load(Ordering::Relaxed) {
                        return;
                    }
                    let tid = order[pos];
                    if catch_unwind(AssertUnwindSafe(|| body(state, tid))).is_err() {
                        abort.store(true, Ordering::Relaxed);
                        let mut slot = failure.lock().unwrap();
                        if slot.is_none() {
                            *slot = Some((w, tid));
                        }
                        return;
                    }
                    pos += num_workers;
                }
            });
        }
    });

    if let Some((worker, tid)) = *failure.lock().unwrap() {
        return Err(Error::Execution { worker, track: resolve(tid) });
    }
    Ok(())
}

/// Scale used by the order-independent tally: contributions are converted
/// to 64.64 fixed point, so integer addition makes the merged sum identical
/// for any worker count or visit order. Resolution is 2^-64 per
/// contribution; magnitudes up to ~9e18 fit without overflow.
const FIXED_SCALE: f64 = 18446744073709551616.0; // 2^64

#[inline]
pub fn to_fixed(v: f64) -> i128 {
    debug_assert!(v.is_finite(), "tally contribution must be finite");
    (v * FIXED_SCALE) as i128
}

#[inline]
pub fn from_fixed(v: i128) -> f64 {
    (v as f64) / FIXED_SCALE
}

/// Per-worker fixed-point tally. Each worker owns one; merging sums the
/// integer bins, so the result is bitwise independent of how contributions
/// were split across workers.
pub struct FixedTally {
    bins: Vec<i128>,
}

impl FixedTally {
    pub fn new(len: usize) -> Self {
        FixedTally { bins: vec![0i128; len] }
    }

    #[inline]
    pub fn add(&mut self, bin: usize, v: f64) {
        self.bins[bin] += to_fixed(v);
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Merges per-worker fixed-point tallies into floating point, summing the
/// integer bins first so the conversion rounds exactly once per bin.
pub fn merge_fixed(parts: &[FixedTally]) -> Vec<f64> {
    assert!(!parts.is_empty());
    let len = parts[0].bins.len();
    let mut out = vec![0.0; len];
    for (bin, slot) in out.iter_mut().enumerate() {
        let mut sum = 0i128;
        for part in parts {
            sum += part.bins[bin];
        }
        *slot = from_fixed(sum);
    }
    out
}

/// Shared floating-point tally updated by compare-and-swap. Faster than the
/// fixed-point path but the result depends on the order contributions land,
/// so it is not bitwise reproducible across worker counts.
pub struct AtomicTally {
    bins: Vec<AtomicU64>,
}

impl AtomicTally {
    pub fn new(len: usize) -> Self {
        let mut bins = Vec::with_capacity(len);
        bins.resize_with(len, || AtomicU64::new(0f64.to_bits()));
        AtomicTally { bins }
    }

    #[inline]
    pub fn add(&self, bin: usize, v: f64) {
        let slot = &self.bins[bin];
        let mut cur = slot.load(Ordering::Relaxed);
        loop {
            let new = (f64::from_bits(cur) + v).to_bits();
            match slot.compare_exchange_weak(cur, new, Ordering::Relaxed, Ordering::Relaxed) {
                Ok(_) => return,
                Err(seen) => cur = seen,
            }
        }
    }

    pub fn snapshot(&self) -> Vec<f64> {
        self.bins.iter().map(|b| f64::from_bits(b.load(Ordering::Relaxed))).collect()
    }
}
