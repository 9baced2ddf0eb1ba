//! Orchestration for the three subcommands: `run` (solve and write
//! artifacts), `trace` (build the ray apparatus and report its size and
//! storage split without solving), and `validate` (load and check inputs).

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use moc3d_core::geometry::ExtrudedGeometry;
use moc3d_core::quadrature::PolarQuadrature;
use moc3d_core::sched::partition_exp_otf;
use moc3d_core::solver::{solve, TraceMode};
use moc3d_core::trace2d::generate_tracks_2d;
use moc3d_core::trace3d::{build_stacks, estimate_track_memory, z_of, TrackIndex3D};

use crate::config::RunConfig;
use crate::input::load_geometry;
use crate::report::{self, ArtifactPaths};

/// Result of the `run` subcommand.
pub struct RunOutcome {
    pub k_eff: f64,
    pub iterations: usize,
    pub output_dir: PathBuf,
    pub paths: ArtifactPaths,
    pub warnings: Vec<String>,
}

/// Result of the `trace` subcommand.
pub struct TraceOutcome {
    pub num_tracks_2d: usize,
    pub num_chains: usize,
    pub num_tracks_3d: usize,
    pub bytes_total: u64,
    pub preloaded_tracks: usize,
    pub preloaded_bytes: u64,
    pub otf_tracks: usize,
    pub report_path: PathBuf,
    pub tracks_path: Option<PathBuf>,
}

/// Result of the `validate` subcommand.
pub struct ValidateOutcome {
    pub num_fsrs: usize,
    pub num_groups: usize,
    pub num_materials: usize,
    pub num_slabs: usize,
    pub warnings: Vec<String>,
}

fn load(config_path: &Path, output_override: Option<&Path>) -> Result<(RunConfig, ExtrudedGeometry)> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(dir) = output_override {
        cfg.output_dir = dir.to_path_buf();
    } else if cfg.output_dir.is_relative() {
        // A relative output directory is taken relative to the config
        // file, so runs land next to their inputs regardless of cwd.
        if let Some(dir) = config_path.parent() {
            cfg.output_dir = dir.join(&cfg.output_dir);
        }
    }
    let geom = load_geometry(&cfg.geometry)?;
    Ok((cfg, geom))
}

/// Solve the configured problem and write artifacts.
pub fn run(config_path: &Path, output_override: Option<&Path>) -> Result<RunOutcome> {
    let (cfg, geom) = load(config_path, output_override)?;
    let opts = cfg.solve_options();
    let out = solve(&geom, &opts)?;
    let paths = report::write_all(&cfg.output_dir, &cfg, &geom, &out)?;
    Ok(RunOutcome {
        k_eff: out.k_eff,
        iterations: out.iterations,
        output_dir: cfg.output_dir.clone(),
        paths,
        warnings: out.warnings,
    })
}

/// Build the ray apparatus, size it, and report how the configured mode
/// would split storage — without running the solver.
pub fn trace(
    config_path: &Path,
    output_override: Option<&Path>,
    dump_tracks: bool,
) -> Result<TraceOutcome> {
    let (cfg, geom) = load(config_path, output_override)?;
    let t2d = generate_tracks_2d(&geom, cfg.rays.num_azim, cfg.rays.spacing)?;
    let polar = PolarQuadrature::gauss_legendre(cfg.rays.polar)?;
    let set = build_stacks(&geom, &t2d, &polar, cfg.rays.axial_spacing)?;

    let num3d = set.num_tracks_3d();
    let estimates: Vec<u64> = (0..num3d)
        .map(|tid| estimate_track_memory(&set, &geom, set.locate(tid as u32)))
        .collect();
    let bytes_total: u64 = estimates.iter().sum();

    let (preloaded_tracks, preloaded_bytes, otf_tracks) = match cfg.trace_mode() {
        TraceMode::OnTheFly => (0, 0, num3d),
        TraceMode::Explicit { .. } => (num3d, bytes_total, 0),
        TraceMode::Hybrid { budget, fraction } => {
            let (pre, otf) = partition_exp_otf(&estimates, budget, fraction);
            let pre_bytes: u64 = pre.iter().map(|&t| estimates[t as usize]).sum();
            (pre.len(), pre_bytes, otf.len())
        }
    };

    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating output directory {}", cfg.output_dir.display()))?;

    let mut text = String::new();
    {
        use std::fmt::Write;
        let _ = writeln!(text, "moc3d trace report");
        let _ = writeln!(text, "==================");
        let _ = writeln!(text);
        let _ = writeln!(text, "tracks 2d        = {}", t2d.tracks.len());
        let _ = writeln!(text, "chains 2d        = {}", t2d.chains.len());
        let _ = writeln!(text, "tracks 3d        = {num3d}");
        let _ = writeln!(text, "segment bytes    = {bytes_total}");
        let _ = writeln!(text, "preloaded tracks = {preloaded_tracks}");
        let _ = writeln!(text, "preloaded bytes  = {preloaded_bytes}");
        let _ = writeln!(text, "on-the-fly tracks= {otf_tracks}");
    }
    let report_path = cfg.output_dir.join("trace_summary.txt");
    report::write_atomic(&report_path, &text)?;

    let tracks_path = if dump_tracks {
        let path = cfg.output_dir.join("tracks.csv");
        report::write_atomic(&path, &render_tracks_csv(&set, &t2d, &estimates))?;
        Some(path)
    } else {
        None
    };

    Ok(TraceOutcome {
        num_tracks_2d: t2d.tracks.len(),
        num_chains: t2d.chains.len(),
        num_tracks_3d: num3d,
        bytes_total,
        preloaded_tracks,
        preloaded_bytes,
        otf_tracks,
        report_path,
        tracks_path,
    })
}

fn render_tracks_csv(
    set: &moc3d_core::trace3d::ZStackSet,
    t2d: &moc3d_core::trace2d::TrackSet2D,
    estimates: &[u64],
) -> String {
    use std::fmt::Write;
    let mut s =
        String::from("tid,track2d,azim,polar,member,s_start,s_end,z_start,z_end,bytes\n");
    for tid in 0..set.num_tracks_3d() as u32 {
        let idx: TrackIndex3D = set.locate(tid);
        let stack = set.stack(idx.track2d, idx.polar);
        let cot = set.polar().cot_theta(idx.polar as usize);
        let chord = set.chord(idx);
        let z_a = z_of(stack, cot, idx.member, chord.s_a);
        let z_b = z_of(stack, cot, idx.member, chord.s_b);
        let azim = t2d.tracks[idx.track2d as usize].azim;
        let _ = writeln!(
            s,
            "{tid},{},{azim},{},{},{},{},{},{},{}",
            idx.track2d,
            idx.polar,
            idx.member,
            report::fmt(chord.s_a),
            report::fmt(chord.s_b),
            report::fmt(z_a),
            report::fmt(z_b),
            estimates[tid as usize],
        );
    }
    s
}

/// Load and validate the configuration and geometry without solving.
pub fn validate(config_path: &Path) -> Result<ValidateOutcome> {
    let (_cfg, geom) = load(config_path, None)?;
    Ok(ValidateOutcome {
        num_fsrs: geom.num_fsrs(),
        num_groups: geom.num_groups(),
        num_materials: geom.materials().len(),
        num_slabs: geom.mesh().num_slabs(),
        warnings: geom.warnings().to_vec(),
    })
}
