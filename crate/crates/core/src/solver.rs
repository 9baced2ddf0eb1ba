//! k-eigenvalue transport solver: characteristic attenuation along 3D
//! tracks, isotropic multigroup sources, a load-balanced data-parallel
//! sweep over linked tracks, and a power iteration with fission-source
//! normalization and a neutron-balance report.

use crate::geometry::{ExtrudedGeometry, MaterialXS};
use crate::quadrature::PolarQuadrature;
use crate::sched::{self, AtomicTally, FixedTally};
use crate::trace2d::{generate_tracks_2d, Dir, TrackSet2D};
use crate::trace3d::{
    build_explicit, build_stacks, compute_track_volumes, estimate_track_memory, flux_slot,
    trace_segments_otf, ExplicitStore, LinkTarget, Segment3D, ZStackSet,
};
use crate::{Error, Result};
use std::sync::atomic::{AtomicU64, Ordering::Relaxed};
use std::time::Instant;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Optical thickness below which attenuation switches to a second-order
/// expansion that never divides by the cross section.
const SMALL_TAU: f64 = 1.0e-8;

// ----------------------------------------------------------------------
// Attenuation kernel
// ----------------------------------------------------------------------

/// Flux change over one segment: `delta = (psi - q/sigma) * (1 - e^(-tau))`
/// with `tau = sigma_t * length`; the caller updates `psi_out = psi - delta`
/// and tallies `delta`. Written against `expm1` so a segment in equilibrium
/// (`psi == q/sigma`) attenuates to exactly zero change. For tiny optical
/// thickness the expansion `(psi*tau - q*length)*(1 - tau/2)` is used
/// instead, which stays finite for vanishing cross sections.
#[inline]
pub fn segment_delta(
    psi: f64,
    q: f64,
    sigma_t: f64,
    length: f64,
    table: Option<&ExpTable>,
) -> f64 {
    let tau = sigma_t * length;
    if tau < SMALL_TAU {
        (psi * tau - q * length) * (1.0 - 0.5 * tau)
    } else {
        let f = match table {
            Some(t) => t.one_minus_exp(tau),
            None => -(-tau).exp_m1(),
        };
        (psi - q / sigma_t) * f
    }
}

/// Tabulated `f(tau) = 1 - e^(-tau)` with linear interpolation. The step is
/// chosen so the interpolation error bound `h^2/8 * max|f''|` stays below
/// 1e-7 everywhere on the covered range [0, 40]; beyond it `f` is 1 to
/// better than 1e-17.
pub struct ExpTable {
    step: f64,
    inv_step: f64,
    max_tau: f64,
    nodes: Vec<f64>,
    slopes: Vec<f64>,
}

impl ExpTable {
    pub fn new() -> Self {
        let step: f64 = 8.9e-4; // (8.9e-4)^2 / 8 = 9.9e-8 worst-case error
        let n = (40.0 / step).ceil() as usize;
        let mut nodes = Vec::with_capacity(n + 1);
        for i in 0..=n {
            nodes.push(-(-(i as f64) * step).exp_m1());
        }
        let slopes: Vec<f64> =
            (0..n).map(|i| (nodes[i + 1] - nodes[i]) / step).collect();
        ExpTable { step, inv_step: 1.0 / step, max_tau: n as f64 * step, nodes, slopes }
    }

    #[inline]
    pub fn one_minus_exp(&self, tau: f64) -> f64 {
        if tau >= self.max_tau {
            return 1.0;
        }
        let i = ((tau * self.inv_step) as usize).min(self.slopes.len() - 1);
        self.nodes[i] + self.slopes[i] * (tau - i as f64 * self.step)
    }
}

impl Default for ExpTable {
    fn default() -> Self {
        Self::new()
    }
}

// ----------------------------------------------------------------------
// Sources
// ----------------------------------------------------------------------

/// Isotropic multigroup source per steradian:
/// `q[j,g] = (chi_g * sum(nu_sigma_f * phi_j) / k + sum_g' sigma_s[g'->g] *
/// phi[j,g']) / (4 pi)`.
pub fn compute_source(geom: &ExtrudedGeometry, flux: &[f64], k_eff: f64, out: &mut [f64]) {
    let groups = geom.num_groups();
    let mats = geom.materials();
    for j in 0..geom.num_fsrs() {
        let m = &mats[geom.material_of(j)];
        let frow = &flux[j * groups..(j + 1) * groups];
        let orow = &mut out[j * groups..(j + 1) * groups];
        let fission: f64 =
            m.nu_sigma_f.iter().zip(frow).map(|(nsf, phi)| nsf * phi).sum();
        for g in 0..groups {
            orow[g] = m.chi[g] * fission / k_eff;
        }
        for gp in 0..groups {
            let phi = frow[gp];
            let srow = &m.sigma_s[gp];
            for g in 0..groups {
                orow[g] += srow[g] * phi;
            }
        }
        for v in orow.iter_mut() {
            *v /= FOUR_PI;
        }
    }
}

// ----------------------------------------------------------------------
// Options and reports
// ----------------------------------------------------------------------

/// How segment data reaches the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceMode {
    /// Generate every track's segments during the sweep.
    OnTheFly,
    /// Preload every track; fails upfront if an optional byte budget is
    /// exceeded.
    Explicit { budget: Option<u64> },
    /// Preload the heaviest tracks into `fraction` of `budget` bytes and
    /// generate the rest on the fly.
    Hybrid { budget: u64, fraction: f64 },
}

/// How per-segment tallies are accumulated across workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accumulation {
    /// Per-worker fixed-point bins merged by integer addition: results are
    /// bitwise identical for any worker count.
    Deterministic,
    /// Shared atomic floating-point bins: faster, but the last few digits
    /// depend on scheduling.
    Fast,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub num_azim: usize,
    pub ray_spacing: f64,
    pub polar_per_hemisphere: usize,
    pub axial_spacing: f64,
    pub mode: TraceMode,
    pub workers: usize,
    pub accumulation: Accumulation,
    pub use_exp_table: bool,
    pub tol_k: f64,
    pub tol_source: f64,
    pub max_outers: usize,
    pub chunk_size: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            num_azim: 8,
            ray_spacing: 0.1,
            polar_per_hemisphere: 2,
            axial_spacing: 0.25,
            mode: TraceMode::OnTheFly,
            workers: 1,
            accumulation: Accumulation::Deterministic,
            use_exp_table: false,
            tol_k: 1e-5,
            tol_source: 1e-5,
            max_outers: 1000,
            chunk_size: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub k: f64,
    pub delta_k: f64,
    pub source_rms: f64,
}

/// Global neutron balance of the final iteration, all in absolute rates:
/// `production / k = absorption + leakage` up to convergence error.
#[derive(Debug, Clone, Copy)]
pub struct BalanceReport {
    pub production: f64,
    pub absorption: f64,
    pub leakage: f64,
    pub k: f64,
    /// `|production/k - absorption - leakage| / (production/k)`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TraceStats {
    pub num_tracks_2d: usize,
    pub num_chains: usize,
    pub num_tracks_3d: usize,
    pub segments_total: u64,
    pub bytes_total: u64,
    pub preloaded_tracks: usize,
    pub preloaded_bytes: u64,
    pub otf_tracks: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Timings {
    pub setup_seconds: f64,
    pub preload_seconds: f64,
    pub solve_seconds: f64,
    pub sweeps: usize,
}

#[derive(Debug)]
pub struct SolveOutput {
    pub k_eff: f64,
    /// Scalar flux, FSR-major: `flux[fsr * groups + g]`, normalized so the
    /// volume-integrated fission production equals the number of FSRs.
    pub flux: Vec<f64>,
    /// Track-based FSR volumes used by the solver.
    pub volumes: Vec<f64>,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    pub balance: BalanceReport,
    pub stats: TraceStats,
    pub timings: Timings,
    pub warnings: Vec<String>,
}

// ----------------------------------------------------------------------
// Sweep
// ----------------------------------------------------------------------

enum WorkerTally<'a> {
    Fixed(FixedTally),
    Atomic(&'a AtomicTally),
}

impl WorkerTally<'_> {
    #[inline]
    fn add(&mut self, bin: usize, v: f64) {
        match self {
            WorkerTally::Fixed(t) => t.add(bin, v),
            WorkerTally::Atomic(t) => t.add(bin, v),
        }
    }
}

struct SweepState<'a> {
    tally: WorkerTally<'a>,
    psi: Vec<f64>,
    scratch: Vec<Segment3D>,
}

/// Everything the sweep needs that stays fixed across iterations. One
/// `sweep` call attenuates every 3D track in both directions against the
/// incoming boundary fluxes in `old_bf`, writes outgoing fluxes to the
/// linked slots of `new_bf`, and returns the merged tally: per-(FSR, group)
/// weighted flux differences, with the total leakage rate in the last bin.
struct Sweeper<'a> {
    geom: &'a ExtrudedGeometry,
    set: &'a ZStackSet,
    store: &'a ExplicitStore,
    order: &'a [u32],
    /// Per 3D track: angular weight times perpendicular tube area.
    coeff: &'a [f64],
    mat_of_fsr: &'a [u32],
    exp_table: Option<&'a ExpTable>,
    groups: usize,
    workers: usize,
    accumulation: Accumulation,
}

impl Sweeper<'_> {
    fn bins(&self) -> usize {
        self.geom.num_fsrs() * self.groups + 1
    }

    fn leak_bin(&self) -> usize {
        self.geom.num_fsrs() * self.groups
    }

    fn sweep(&self, source: &[f64], old_bf: &[AtomicU64], new_bf: &[AtomicU64]) -> Result<Vec<f64>> {
        let groups = self.groups;
        let mats = self.geom.materials();
        let shared_tally = match self.accumulation {
            Accumulation::Fast => Some(AtomicTally::new(self.bins())),
            Accumulation::Deterministic => None,
        };
        let mut states: Vec<SweepState> = (0..self.workers)
            .map(|_| SweepState {
                tally: match &shared_tally {
                    Some(t) => WorkerTally::Atomic(t),
                    None => WorkerTally::Fixed(FixedTally::new(self.bins())),
                },
                psi: vec![0.0; groups],
                scratch: Vec::new(),
            })
            .collect();

        let body = |st: &mut SweepState, tid: u32| {
            let idx = self.set.locate(tid);
            let coeff = self.coeff[tid as usize];
            let explicit = self.store.get(tid);
            if explicit.is_none() {
                trace_segments_otf(self.set, self.geom, idx, &mut st.scratch)
                    .expect("on-the-fly segment generation failed");
            }
            for dir in [Dir::Fwd, Dir::Bwd] {
                let slot = flux_slot(tid, dir) as usize;
                for g in 0..groups {
                    st.psi[g] = f64::from_bits(old_bf[slot * groups + g].load(Relaxed));
                }
                match (explicit, dir) {
                    (Some((ids, lens)), Dir::Fwd) => self.run(
                        st,
                        coeff,
                        mats,
                        source,
                        ids.iter().copied().zip(lens.iter().copied()),
                    ),
                    (Some((ids, lens)), Dir::Bwd) => self.run(
                        st,
                        coeff,
                        mats,
                        source,
                        ids.iter().rev().copied().zip(lens.iter().rev().copied()),
                    ),
                    (None, Dir::Fwd) => {
                        let segs = std::mem::take(&mut st.scratch);
                        self.run(st, coeff, mats, source, segs.iter().map(|s| (s.fsr, s.length)));
                        st.scratch = segs;
                    }
                    (None, Dir::Bwd) => {
                        let segs = std::mem::take(&mut st.scratch);
                        self.run(
                            st,
                            coeff,
                            mats,
                            source,
                            segs.iter().rev().map(|s| (s.fsr, s.length)),
                        );
                        st.scratch = segs;
                    }
                }
                match self.set.out_link(tid, dir) {
                    LinkTarget::Terminal => {
                        let outflow: f64 = st.psi.iter().sum();
                        let bin = self.leak_bin();
                        st.tally.add(bin, coeff * outflow);
                    }
                    LinkTarget::Slot(s) => {
                        for g in 0..groups {
                            new_bf[s as usize * groups + g].store(st.psi[g].to_bits(), Relaxed);
                        }
                    }
                }
            }
        };

        let set = self.set;
        sched::execute(self.order, &mut states, body, |tid| {
            let i = set.locate(tid);
            Some((i.track2d, i.polar, i.member))
        })?;

        Ok(match shared_tally {
            Some(t) => t.snapshot(),
            None => {
                let parts: Vec<FixedTally> = states
                    .into_iter()
                    .map(|s| match s.tally {
                        WorkerTally::Fixed(t) => t,
                        WorkerTally::Atomic(_) => unreachable!(),
                    })
                    .collect();
                sched::merge_fixed(&parts)
            }
        })
    }

    #[inline]
    fn run(
        &self,
        st: &mut SweepState,
        coeff: f64,
        mats: &[MaterialXS],
        source: &[f64],
        segments: impl Iterator<Item = (u32, f64)>,
    ) {
        let groups = self.groups;
        for (fsr, length) in segments {
            let fsr = fsr as usize;
            let sigma = &mats[self.mat_of_fsr[fsr] as usize].sigma_t;
            let qrow = &source[fsr * groups..(fsr + 1) * groups];
            for g in 0..groups {
                let delta =
                    segment_delta(st.psi[g], qrow[g], sigma[g], length, self.exp_table);
                st.psi[g] -= delta;
                st.tally.add(fsr * groups + g, coeff * delta);
            }
        }
    }
}

// ----------------------------------------------------------------------
// Eigenvalue solve
// ----------------------------------------------------------------------

fn validate(geom: &ExtrudedGeometry, opts: &SolveOptions) -> Result<()> {
    if opts.workers == 0 {
        return Err(Error::Parameter("workers must be at least 1".into()));
    }
    if opts.max_outers == 0 {
        return Err(Error::Parameter("max_outers must be at least 1".into()));
    }
    if !(opts.tol_k > 0.0) || !(opts.tol_source > 0.0) {
        return Err(Error::Parameter("convergence tolerances must be positive".into()));
    }
    if let TraceMode::Hybrid { fraction, .. } = opts.mode {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Parameter(format!(
                "preload fraction must be in (0, 1], got {fraction}"
            )));
        }
    }
    for m in geom.materials() {
        for (g, &st) in m.sigma_t.iter().enumerate() {
            if !(st > 0.0) {
                return Err(Error::Parameter(format!(
                    "material '{}' group {g}: total cross section must be positive",
                    m.name
                )));
            }
        }
    }
    Ok(())
}

fn fission_density(geom: &ExtrudedGeometry, flux: &[f64], out: &mut [f64]) {
    let groups = geom.num_groups();
    let mats = geom.materials();
    for (j, slot) in out.iter_mut().enumerate() {
        let m = &mats[geom.material_of(j)];
        *slot = m
            .nu_sigma_f
            .iter()
            .zip(&flux[j * groups..(j + 1) * groups])
            .map(|(nsf, phi)| nsf * phi)
            .sum();
    }
}

fn absorption_rate(geom: &ExtrudedGeometry, flux: &[f64], volumes: &[f64]) -> f64 {
    let groups = geom.num_groups();
    let mats = geom.materials();
    let mut total = 0.0;
    for j in 0..geom.num_fsrs() {
        let m = &mats[geom.material_of(j)];
        for g in 0..groups {
            let removal: f64 = m.sigma_t[g] - m.sigma_s[g].iter().sum::<f64>();
            total += volumes[j] * removal * flux[j * groups + g];
        }
    }
    total
}

/// Solves the k-eigenvalue problem on `geom`. Power iteration over transport
/// sweeps: build the isotropic source from the current flux and k, sweep all
/// 3D tracks against double-buffered boundary fluxes, recover scalar fluxes
/// from the tallies, update k from the fission production ratio, then
/// renormalize so total production stays fixed. Converged when both the k
/// change and the RMS relative fission-density change drop below tolerance.
pub fn solve(geom: &ExtrudedGeometry, opts: &SolveOptions) -> Result<SolveOutput> {
    validate(geom, opts)?;
    let groups = geom.num_groups();
    let num_fsrs = geom.num_fsrs();
    let mut warnings: Vec<String> = geom.warnings().to_vec();

    // ---- ray apparatus ----
    let setup_start = Instant::now();
    let t2d = generate_tracks_2d(geom, opts.num_azim, opts.ray_spacing)?;
    let polar = PolarQuadrature::gauss_legendre(opts.polar_per_hemisphere)?;
    let set = build_stacks(geom, &t2d, &polar, opts.axial_spacing)?;
    let volumes = compute_track_volumes(&set, geom, &t2d)?;
    for (j, &v) in volumes.iter().enumerate() {
        if v == 0.0 {
            warnings.push(format!(
                "FSR {j} is not crossed by any track; its flux is the local infinite-medium value"
            ));
        }
    }
    let packed = sched::pack_track_indices(&set);
    let estimates: Vec<u64> =
        packed.iter().map(|&t| estimate_track_memory(&set, geom, set.locate(t))).collect();
    let bytes_total: u64 = estimates.iter().sum();
    let order = sched::serpentine_order(&estimates, opts.chunk_size);
    let coeff = track_coefficients(&t2d, &polar, &set);
    let mat_of_fsr: Vec<u32> = (0..num_fsrs).map(|j| geom.material_of(j) as u32).collect();
    let setup_seconds = setup_start.elapsed().as_secs_f64();

    // ---- segment preload ----
    let preload_start = Instant::now();
    let (preload, budget): (Vec<u32>, Option<u64>) = match opts.mode {
        TraceMode::OnTheFly => (Vec::new(), None),
        TraceMode::Explicit { budget } => (packed.clone(), budget),
        TraceMode::Hybrid { budget, fraction } => {
            let (p, _) = sched::partition_exp_otf(&estimates, budget, fraction);
            (p, Some(budget))
        }
    };
    let preloaded_bytes: u64 = preload.iter().map(|&t| estimates[t as usize]).sum();
    let preload_idx: Vec<crate::trace3d::TrackIndex3D> =
        preload.iter().map(|&t| set.locate(t)).collect();
    let store = build_explicit(&set, geom, &preload_idx, budget)?;
    let preload_seconds = preload_start.elapsed().as_secs_f64();

    let stats = TraceStats {
        num_tracks_2d: t2d.tracks.len(),
        num_chains: t2d.chains.len(),
        num_tracks_3d: set.num_tracks_3d(),
        segments_total: bytes_total / 12,
        bytes_total,
        preloaded_tracks: preload.len(),
        preloaded_bytes,
        otf_tracks: set.num_tracks_3d() - preload.len(),
    };

    let exp_table = if opts.use_exp_table { Some(ExpTable::new()) } else { None };
    let sweeper = Sweeper {
        geom,
        set: &set,
        store: &store,
        order: &order,
        coeff: &coeff,
        mat_of_fsr: &mat_of_fsr,
        exp_table: exp_table.as_ref(),
        groups,
        workers: opts.workers,
        accumulation: opts.accumulation,
    };

    // ---- state ----
    let norm_target = num_fsrs as f64;
    let mut flux = vec![1.0; num_fsrs * groups];
    let mut source = vec![0.0; num_fsrs * groups];
    let mut fission_old = vec![0.0; num_fsrs];
    fission_density(geom, &flux, &mut fission_old);
    let production0: f64 = volumes.iter().zip(&fission_old).map(|(v, f)| v * f).sum();
    if !(production0 > 0.0) {
        return Err(Error::Eigenvalue(
            "no fission production anywhere; the k-eigenvalue problem is undefined".into(),
        ));
    }
    let scale0 = norm_target / production0;
    for v in flux.iter_mut() {
        *v *= scale0;
    }
    for v in fission_old.iter_mut() {
        *v *= scale0;
    }

    let bf_len = 2 * set.num_tracks_3d() * groups;
    let make_bf = || -> Vec<AtomicU64> {
        let mut v = Vec::with_capacity(bf_len);
        v.resize_with(bf_len, || AtomicU64::new(0f64.to_bits()));
        v
    };
    let bf_a = make_bf();
    let bf_b = make_bf();
    let mut current_is_a = true;

    let mut k = 1.0f64;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut fission_new = vec![0.0; num_fsrs];
    let mut balance: Option<BalanceReport> = None;
    let mut converged = false;

    // ---- power iteration ----
    let solve_start = Instant::now();
    for _outer in 1..=opts.max_outers {
        compute_source(geom, &flux, k, &mut source);
        let (old_bf, new_bf) =
            if current_is_a { (&bf_a, &bf_b) } else { (&bf_b, &bf_a) };
        for slot in new_bf.iter() {
            slot.store(0f64.to_bits(), Relaxed);
        }
        let tally = sweeper.sweep(&source, old_bf, new_bf)?;
        let leakage = tally[sweeper.leak_bin()];

        // Scalar flux from the track tallies (track-based volumes keep the
        // identity exact; untracked FSRs fall back to the local
        // infinite-medium value q * 4pi / sigma).
        let mats = geom.materials();
        for j in 0..num_fsrs {
            let m = &mats[mat_of_fsr[j] as usize];
            for g in 0..groups {
                let q = source[j * groups + g];
                let sigma = m.sigma_t[g];
                let mut phi = FOUR_PI * q / sigma;
                if volumes[j] > 0.0 {
                    phi += tally[j * groups + g] / (sigma * volumes[j]);
                }
                if !phi.is_finite() || phi < 0.0 {
                    return Err(Error::NonPhysicalFlux { fsr: j, group: g });
                }
                flux[j * groups + g] = phi;
            }
        }

        fission_density(geom, &flux, &mut fission_new);
        let production: f64 = volumes.iter().zip(&fission_new).map(|(v, f)| v * f).sum();
        let k_new = k * production / norm_target;
        if !k_new.is_finite() || k_new <= 0.0 {
            return Err(Error::Eigenvalue(format!(
                "eigenvalue left the physical range: k = {k_new}"
            )));
        }
        let delta_k = (k_new - k).abs();

        // Balance of this very sweep, before renormalization.
        let absorption = absorption_rate(geom, &flux, &volumes);
        let prod_rate = production / k_new;
        balance = Some(BalanceReport {
            production,
            absorption,
            leakage,
            k: k_new,
            residual: (prod_rate - absorption - leakage).abs() / prod_rate,
        });

        // Renormalize flux, fission density and the outgoing boundary
        // fluxes so production returns to the target.
        let scale = norm_target / production;
        for v in flux.iter_mut() {
            *v *= scale;
        }
        for v in fission_new.iter_mut() {
            *v *= scale;
        }
        for slot in new_bf.iter() {
            let scaled = f64::from_bits(slot.load(Relaxed)) * scale;
            slot.store(scaled.to_bits(), Relaxed);
        }

        // Shape change of the (normalized) fission density.
        let mut sum_sq = 0.0;
        let mut n_fissile = 0usize;
        for (fo, fn_) in fission_old.iter().zip(&fission_new) {
            if *fo > 0.0 {
                let rel = (fn_ - fo) / fo;
                sum_sq += rel * rel;
                n_fissile += 1;
            }
        }
        let source_rms = if n_fissile > 0 { (sum_sq / n_fissile as f64).sqrt() } else { 0.0 };

        history.push(IterationRecord { k: k_new, delta_k, source_rms });
        fission_old.copy_from_slice(&fission_new);
        k = k_new;
        current_is_a = !current_is_a;

        if history.len() >= 2 && delta_k < opts.tol_k && source_rms < opts.tol_source {
            converged = true;
            break;
        }
    }
    let solve_seconds = solve_start.elapsed().as_secs_f64();

    if !converged {
        let last = history.last().copied().unwrap();
        return Err(Error::NonConvergence {
            iterations: history.len(),
            last_dk: last.delta_k,
            last_rms: last.source_rms,
            history: history.iter().map(|r| (r.k, r.source_rms)).collect(),
        });
    }

    let iterations = history.len();
    Ok(SolveOutput {
        k_eff: k,
        flux,
        volumes,
        iterations,
        balance: balance.unwrap(),
        history,
        stats,
        timings: Timings {
            setup_seconds,
            preload_seconds,
            solve_seconds,
            sweeps: iterations,
        },
        warnings,
    })
}

/// Per-track sweep coefficient: total angular weight (over 4 pi) times the
/// perpendicular cross-sectional area of the track's flux tube.
fn track_coefficients(t2d: &TrackSet2D, polar: &PolarQuadrature, set: &ZStackSet) -> Vec<f64> {
    let mut coeff = vec![0.0; set.num_tracks_3d()];
    for stack in set.stacks() {
        let m = t2d.tracks[stack.track2d as usize].azim as usize;
        let n = stack.polar as usize;
        let w = FOUR_PI * t2d.azimuthal.weight[m] * polar.fraction(n);
        let area = t2d.families[m].spacing * stack.delta_z * polar.sin_theta(n);
        for member in 0..stack.count {
            let idx = crate::trace3d::TrackIndex3D {
                track2d: stack.track2d,
                polar: stack.polar,
                member,
            };
            coeff[set.tid3(idx) as usize] = w * area;
        }
    }
    coeff
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        Bc, BoundaryConds, CellSpec, GeometrySpec, MaterialXS, RingSpec, ZoneMaterials,
    };
    use crate::trace3d::{EndTouch, TrackIndex3D};

    fn one_group(name: &str, sigma_t: f64, sigma_s: f64, nu_sigma_f: f64) -> MaterialXS {
        MaterialXS {
            name: name.into(),
            sigma_t: vec![sigma_t],
            sigma_s: vec![vec![sigma_s]],
            nu_sigma_f: vec![nu_sigma_f],
            chi: vec![if nu_sigma_f > 0.0 { 1.0 } else { 0.0 }],
        }
    }

    fn uniform_cube(mat: MaterialXS, bc: BoundaryConds) -> ExtrudedGeometry {
        ExtrudedGeometry::build(GeometrySpec {
            materials: vec![mat],
            cells: vec![CellSpec { rings: vec![], outer: ZoneMaterials::Uniform(0) }],
            lattice: vec![vec![0]],
            pitch: (1.0, 1.0),
            origin: (0.0, 0.0),
            axial_planes: vec![0.0, 0.5, 1.0],
            boundary: bc,
        })
        .unwrap()
    }

    // ------------------------------------------------------------------
    // Attenuation kernel
    // ------------------------------------------------------------------

    #[test]
    fn zero_length_changes_nothing() {
        assert_eq!(segment_delta(2.0, 0.7, 1.3, 0.0, None), 0.0);
    }

    #[test]
    fn pure_absorber_attenuates_exponentially() {
        // No source: psi_out = psi * e^(-tau).
        let psi = 2.0;
        let delta = segment_delta(psi, 0.0, 1.0, 1.0, None);
        let psi_out = psi - delta;
        assert!((psi_out - psi * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn equilibrium_flux_is_a_fixed_point() {
        // psi == q / sigma: the formulation must give exactly zero change,
        // not a roundoff-sized residual.
        let q = 0.3;
        let sigma = 0.72;
        let delta = segment_delta(q / sigma, q, sigma, 5.0, None);
        assert_eq!(delta, 0.0);
    }

    #[test]
    fn attenuation_branches_agree_at_the_switch() {
        let psi = 1.7;
        let q = 0.4;
        let length = 1.0;
        for sigma in [0.9e-8, 1.0e-8, 1.1e-8] {
            let tau: f64 = sigma * length;
            let small = (psi * tau - q * length) * (1.0 - 0.5 * tau);
            let exact = (psi - q / sigma) * -(-tau).exp_m1();
            assert!(
                (small - exact).abs() <= 1e-9 * exact.abs().max(1e-300),
                "sigma {sigma}: {small} vs {exact}"
            );
        }
    }

    #[test]
    fn exp_table_is_within_tolerance_everywhere() {
        let table = ExpTable::new();
        let mut worst = 0.0f64;
        let mut tau = 0.0;
        while tau < 41.0 {
            let err = (table.one_minus_exp(tau) - -(-tau).exp_m1()).abs();
            worst = worst.max(err);
            tau += 1.37e-4; // incommensurate with the table step
        }
        assert!(worst <= 1.0e-7, "worst error {worst}");
        assert_eq!(table.one_minus_exp(40.1), 1.0);
        assert_eq!(table.one_minus_exp(1e9), 1.0);
        assert_eq!(table.one_minus_exp(0.0), 0.0);
    }

    // ------------------------------------------------------------------
    // Source construction
    // ------------------------------------------------------------------

    #[test]
    fn source_matches_hand_value() {
        // sigma_s = 0.2, nu_sigma_f = 0.1, chi = 1, phi = 1, k = 1:
        // q = (0.2 + 0.1) / (4 pi).
        let geom =
            uniform_cube(one_group("m", 0.5, 0.2, 0.1), BoundaryConds::all(Bc::Reflective));
        let flux = vec![1.0; geom.num_fsrs()];
        let mut out = vec![0.0; geom.num_fsrs()];
        compute_source(&geom, &flux, 1.0, &mut out);
        for q in &out {
            assert!((q - 0.3 / FOUR_PI).abs() < 1e-15);
        }
        // Doubling k halves only the fission part.
        compute_source(&geom, &flux, 2.0, &mut out);
        for q in &out {
            assert!((q - 0.25 / FOUR_PI).abs() < 1e-15);
        }
    }

    #[test]
    fn source_couples_groups_through_scatter_and_chi() {
        let mat = MaterialXS {
            name: "m".into(),
            sigma_t: vec![0.5, 0.8],
            sigma_s: vec![vec![0.2, 0.2], vec![0.0, 0.3]],
            nu_sigma_f: vec![0.1, 0.6],
            chi: vec![1.0, 0.0],
        };
        let geom = uniform_cube(mat, BoundaryConds::all(Bc::Reflective));
        let n = geom.num_fsrs();
        let mut flux = vec![0.0; 2 * n];
        for j in 0..n {
            flux[2 * j] = 2.0; // group 1
            flux[2 * j + 1] = 0.5; // group 2
        }
        let mut out = vec![0.0; 2 * n];
        compute_source(&geom, &flux, 1.25, &mut out);
        // fission = 0.1*2 + 0.6*0.5 = 0.5; chi = (1, 0), k = 1.25.
        let q1 = (0.5 / 1.25 + 0.2 * 2.0) / FOUR_PI;
        let q2 = (0.2 * 2.0 + 0.3 * 0.5) / FOUR_PI;
        for j in 0..n {
            assert!((out[2 * j] - q1).abs() < 1e-15);
            assert!((out[2 * j + 1] - q2).abs() < 1e-15);
        }
    }

    // ------------------------------------------------------------------
    // Full solves
    // ------------------------------------------------------------------

    #[test]
    fn infinite_medium_k_is_analytic_and_flux_is_flat() {
        // Reflective uniform cube: k = nu_sigma_f / (sigma_t - sigma_s)
        // = 0.3 / 0.2 = 1.5, with an exactly flat flux.
        let geom =
            uniform_cube(one_group("m", 0.3, 0.1, 0.3), BoundaryConds::all(Bc::Reflective));
        let opts = SolveOptions { tol_k: 1e-9, tol_source: 1e-9, ..Default::default() };
        let out = solve(&geom, &opts).unwrap();
        assert!((out.k_eff - 1.5).abs() < 1e-5, "k = {}", out.k_eff);
        let mean: f64 = out.flux.iter().sum::<f64>() / out.flux.len() as f64;
        for phi in &out.flux {
            assert!((phi - mean).abs() <= 1e-9 * mean, "flux not flat: {phi} vs {mean}");
        }
        assert!(out.balance.residual < 1e-6, "balance {:?}", out.balance);
    }

    #[test]
    fn two_group_infinite_medium_matches_algebra() {
        // Balance per group gives phi2 = 0.4 phi1 and k = 0.34 / 0.3.
        let mat = MaterialXS {
            name: "m".into(),
            sigma_t: vec![0.5, 0.8],
            sigma_s: vec![vec![0.2, 0.2], vec![0.0, 0.3]],
            nu_sigma_f: vec![0.1, 0.6],
            chi: vec![1.0, 0.0],
        };
        let geom = uniform_cube(mat, BoundaryConds::all(Bc::Reflective));
        let opts = SolveOptions { tol_k: 1e-10, tol_source: 1e-10, ..Default::default() };
        let out = solve(&geom, &opts).unwrap();
        assert!((out.k_eff - 0.34 / 0.3).abs() < 1e-6, "k = {}", out.k_eff);
        for j in 0..geom.num_fsrs() {
            let ratio = out.flux[2 * j + 1] / out.flux[2 * j];
            assert!((ratio - 0.4).abs() < 1e-8, "phi2/phi1 = {ratio}");
        }
    }

    #[test]
    fn exp_table_shifts_k_by_less_than_its_error_budget() {
        let geom =
            uniform_cube(one_group("m", 0.3, 0.1, 0.3), BoundaryConds::all(Bc::Reflective));
        let exact = solve(&geom, &SolveOptions::default()).unwrap();
        let tabled =
            solve(&geom, &SolveOptions { use_exp_table: true, ..Default::default() }).unwrap();
        assert!(
            (exact.k_eff - tabled.k_eff).abs() < 2e-6,
            "{} vs {}",
            exact.k_eff,
            tabled.k_eff
        );
    }

    fn heterogeneous_geom(bc: BoundaryConds) -> ExtrudedGeometry {
        ExtrudedGeometry::build(GeometrySpec {
            materials: vec![
                one_group("fuel", 0.6, 0.3, 0.25),
                one_group("water", 1.0, 0.9, 0.0),
            ],
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
            axial_planes: vec![0.0, 0.7, 1.4],
            boundary: bc,
        })
        .unwrap()
    }

    #[test]
    fn balance_closes_on_a_leaky_heterogeneous_problem() {
        let geom = heterogeneous_geom(BoundaryConds::all(Bc::Vacuum));
        let opts = SolveOptions {
            tol_k: 1e-7,
            tol_source: 1e-7,
            num_azim: 8,
            ray_spacing: 0.1,
            ..Default::default()
        };
        let out = solve(&geom, &opts).unwrap();
        assert!(out.k_eff > 0.05 && out.k_eff < 1.0, "k = {}", out.k_eff);
        assert!(out.balance.leakage > 0.0);
        assert!(
            out.balance.residual < 1e-4,
            "balance residual {} too large: {:?}",
            out.balance.residual,
            out.balance
        );
    }

    #[test]
    fn all_trace_modes_and_worker_counts_agree_bitwise() {
        let geom = heterogeneous_geom(BoundaryConds::all(Bc::Reflective));
        let base = SolveOptions {
            num_azim: 8,
            ray_spacing: 0.15,
            tol_k: 1e-7,
            tol_source: 1e-7,
            ..Default::default()
        };
        let reference = solve(&geom, &base).unwrap();
        assert!(reference.stats.preloaded_tracks == 0);

        let mut variants: Vec<(SolveOptions, &str)> = Vec::new();
        variants.push((
            SolveOptions { mode: TraceMode::Explicit { budget: None }, ..base.clone() },
            "explicit",
        ));
        variants.push((
            SolveOptions {
                mode: TraceMode::Hybrid {
                    budget: reference.stats.bytes_total / 2,
                    fraction: 0.8,
                },
                ..base.clone()
            },
            "hybrid",
        ));
        variants.push((SolveOptions { workers: 4, ..base.clone() }, "4 workers"));
        variants.push((
            SolveOptions {
                workers: 16,
                mode: TraceMode::Hybrid {
                    budget: reference.stats.bytes_total / 2,
                    fraction: 0.8,
                },
                ..base.clone()
            },
            "16 workers hybrid",
        ));
        for (opts, label) in variants {
            let out = solve(&geom, &opts).unwrap();
            assert_eq!(out.iterations, reference.iterations, "{label}: iteration count");
            assert_eq!(
                out.k_eff.to_bits(),
                reference.k_eff.to_bits(),
                "{label}: k differs ({} vs {})",
                out.k_eff,
                reference.k_eff
            );
            for (a, b) in out.flux.iter().zip(&reference.flux) {
                assert_eq!(a.to_bits(), b.to_bits(), "{label}: flux differs");
            }
            if let TraceMode::Hybrid { .. } = opts.mode {
                assert!(out.stats.preloaded_tracks > 0, "{label}: nothing preloaded");
                assert!(out.stats.otf_tracks > 0, "{label}: nothing left on the fly");
            }
        }
    }

    #[test]
    fn fast_accumulation_matches_deterministic_closely() {
        let geom = heterogeneous_geom(BoundaryConds::all(Bc::Reflective));
        let base = SolveOptions {
            num_azim: 8,
            ray_spacing: 0.15,
            tol_k: 1e-7,
            tol_source: 1e-7,
            workers: 8,
            ..Default::default()
        };
        let det = solve(&geom, &base).unwrap();
        let fast =
            solve(&geom, &SolveOptions { accumulation: Accumulation::Fast, ..base }).unwrap();
        assert!(
            (det.k_eff - fast.k_eff).abs() < 1e-9,
            "{} vs {}",
            det.k_eff,
            fast.k_eff
        );
    }

    #[test]
    fn nonconvergence_returns_history() {
        let geom =
            uniform_cube(one_group("m", 0.3, 0.1, 0.3), BoundaryConds::all(Bc::Reflective));
        let opts = SolveOptions { max_outers: 3, tol_k: 1e-30, ..Default::default() };
        match solve(&geom, &opts) {
            Err(Error::NonConvergence { iterations, history, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 3);
                assert!(history.iter().all(|(k, _)| k.is_finite()));
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn unphysical_inputs_are_rejected() {
        let geom =
            uniform_cube(one_group("m", 0.3, 0.1, 0.0), BoundaryConds::all(Bc::Reflective));
        match solve(&geom, &SolveOptions::default()) {
            Err(Error::Eigenvalue(msg)) => assert!(msg.contains("fission")),
            other => panic!("expected eigenvalue error, got {other:?}"),
        }

        // A vanishing total cross section is rejected when the geometry is
        // built, before the solver ever sees it.
        assert!(ExtrudedGeometry::build(GeometrySpec {
            materials: vec![one_group("m", 0.0, 0.0, 0.1)],
            cells: vec![CellSpec { rings: vec![], outer: ZoneMaterials::Uniform(0) }],
            lattice: vec![vec![0]],
            pitch: (1.0, 1.0),
            origin: (0.0, 0.0),
            axial_planes: vec![0.0, 1.0],
            boundary: BoundaryConds::all(Bc::Reflective),
        })
        .is_err());

        let geom =
            uniform_cube(one_group("m", 0.3, 0.1, 0.3), BoundaryConds::all(Bc::Reflective));
        match solve(&geom, &SolveOptions { workers: 0, ..Default::default() }) {
            Err(Error::Parameter(msg)) => assert!(msg.contains("workers")),
            other => panic!("expected parameter error, got {other:?}"),
        }
    }

    // ------------------------------------------------------------------
    // Direct sweep physics: transmission through a pure absorber
    // ------------------------------------------------------------------

    /// Third exponential integral via composite Simpson, for the analytic
    /// slab transmission 2 E3(tau).
    fn e3(x: f64) -> f64 {
        let n = 20_000;
        let h = 1.0 / n as f64;
        let f = |mu: f64| if mu == 0.0 { 0.0 } else { mu * (-x / mu).exp() };
        let mut sum = f(0.0) + f(1.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * f(i as f64 * h);
        }
        sum * h / 3.0
    }

    #[test]
    fn slab_transmission_matches_exponential_integral() {
        // Isotropic unit flux on the bottom face of a purely absorbing
        // slab of one mean free path: transmission = 2 E3(1).
        let mut bc = BoundaryConds::all(Bc::Reflective);
        bc.z_min = Bc::Vacuum;
        bc.z_max = Bc::Vacuum;
        let geom = uniform_cube(one_group("abs", 1.0, 0.0, 0.0), bc);

        let t2d = generate_tracks_2d(&geom, 8, 0.05).unwrap();
        let polar = PolarQuadrature::gauss_legendre(6).unwrap();
        let set = build_stacks(&geom, &t2d, &polar, 0.05).unwrap();
        let order = sched::pack_track_indices(&set);
        let estimates: Vec<u64> = Vec::new();
        let _ = estimates;
        let coeff = track_coefficients(&t2d, &polar, &set);
        let mat_of_fsr: Vec<u32> =
            (0..geom.num_fsrs()).map(|j| geom.material_of(j) as u32).collect();
        let store = build_explicit(&set, &geom, &[], None).unwrap();
        let sweeper = Sweeper {
            geom: &geom,
            set: &set,
            store: &store,
            order: &order,
            coeff: &coeff,
            mat_of_fsr: &mat_of_fsr,
            exp_table: None,
            groups: 1,
            workers: 1,
            accumulation: Accumulation::Deterministic,
        };

        // Inject unit flux into every slot whose entering end touches the
        // bottom face.
        let bf_len = 2 * set.num_tracks_3d();
        let make = || -> Vec<AtomicU64> {
            let mut v = Vec::with_capacity(bf_len);
            v.resize_with(bf_len, || AtomicU64::new(0f64.to_bits()));
            v
        };
        let old_bf = make();
        let new_bf = make();
        let mut injected = 0.0;
        for stack in set.stacks() {
            for member in 0..stack.count {
                let idx = TrackIndex3D {
                    track2d: stack.track2d,
                    polar: stack.polar,
                    member,
                };
                let tid = set.tid3(idx);
                let c = set.chord(idx);
                for (dir, touch) in [(Dir::Fwd, c.touch_a), (Dir::Bwd, c.touch_b)] {
                    if touch == EndTouch::ZLow {
                        old_bf[flux_slot(tid, dir) as usize].store(1f64.to_bits(), Relaxed);
                        injected += coeff[tid as usize];
                    }
                }
            }
        }
        assert!(injected > 0.0);

        // One sweep advances the pulse a single chord hop, so iterate until
        // the injected flux has fully drained through the linked chains,
        // accumulating the leakage of every pass.
        let source = vec![0.0; geom.num_fsrs()];
        let mut transmitted = 0.0;
        let (mut old, mut new) = (&old_bf, &new_bf);
        for _ in 0..5000 {
            for slot in new.iter() {
                slot.store(0f64.to_bits(), Relaxed);
            }
            let tally = sweeper.sweep(&source, old, new).unwrap();
            let leak = tally[sweeper.leak_bin()];
            transmitted += leak;
            if leak < 1e-13 * injected {
                break;
            }
            std::mem::swap(&mut old, &mut new);
        }
        let expected = 2.0 * e3(1.0);
        let got = transmitted / injected;
        assert!(
            (got - expected).abs() / expected < 0.02,
            "transmission {got} vs analytic {expected}"
        );
    }
}
