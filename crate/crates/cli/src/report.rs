//! Output artifact writers. Every file is written atomically (temp file +
//! rename) so a crashed run never leaves a half-written artifact behind.
//!
//! All numeric output uses a fixed 9-significant-digit scientific format,
//! so files from runs with identical physics are byte-identical. Wall-time
//! measurements live only in `timings.csv`; everything else is
//! deterministic for a deterministic-accumulation run.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use moc3d_core::geometry::ExtrudedGeometry;
use moc3d_core::solver::SolveOutput;

use crate::config::RunConfig;

/// Fixed numeric format for report files: 9 significant digits.
pub fn fmt(x: f64) -> String {
    format!("{x:.8e}")
}

/// Write `content` to `path` atomically via a sibling temp file.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".to_string());
    let tmp = dir.join(format!(".{file_name}.tmp"));
    std::fs::write(&tmp, content).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))?;
    Ok(())
}

/// Paths of the artifacts a run produces.
#[derive(Debug, Clone)]
pub struct ArtifactPaths {
    pub summary: PathBuf,
    pub flux: PathBuf,
    pub balance: PathBuf,
    pub history: PathBuf,
    pub timings: PathBuf,
    pub effective_config: PathBuf,
}

impl ArtifactPaths {
    pub fn in_dir(dir: &Path) -> ArtifactPaths {
        ArtifactPaths {
            summary: dir.join("summary.txt"),
            flux: dir.join("flux.csv"),
            balance: dir.join("balance.csv"),
            history: dir.join("history.csv"),
            timings: dir.join("timings.csv"),
            effective_config: dir.join("config_effective.yaml"),
        }
    }
}

/// Write all run artifacts into `dir` (created if needed).
pub fn write_all(
    dir: &Path,
    cfg: &RunConfig,
    geom: &ExtrudedGeometry,
    out: &SolveOutput,
) -> Result<ArtifactPaths> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let paths = ArtifactPaths::in_dir(dir);
    write_atomic(&paths.summary, &render_summary(cfg, geom, out))?;
    write_atomic(&paths.flux, &render_flux_csv(geom, out))?;
    write_atomic(&paths.balance, &render_balance_csv(out))?;
    write_atomic(&paths.history, &render_history_csv(out))?;
    write_atomic(&paths.timings, &render_timings_csv(out))?;
    write_atomic(&paths.effective_config, &cfg.to_effective_yaml()?)?;
    Ok(paths)
}

/// Human-readable run summary. Contains no wall-clock measurements so two
/// identical runs produce identical bytes.
pub fn render_summary(cfg: &RunConfig, geom: &ExtrudedGeometry, out: &SolveOutput) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "moc3d run summary");
    let _ = writeln!(s, "=================");
    let _ = writeln!(s);
    let _ = writeln!(s, "[problem]");
    let geometry_name = cfg
        .geometry
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| cfg.geometry.display().to_string());
    let _ = writeln!(s, "geometry             = {geometry_name}");
    let (nx, ny) = geom.lattice_shape();
    let _ = writeln!(s, "lattice              = {nx} x {ny} cells");
    let _ = writeln!(s, "axial slabs          = {}", geom.mesh().num_slabs());
    let _ = writeln!(s, "flat source regions  = {}", geom.num_fsrs());
    let _ = writeln!(s, "energy groups        = {}", geom.num_groups());
    let _ = writeln!(s);
    let _ = writeln!(s, "[rays]");
    let _ = writeln!(s, "azimuthal angles     = {}", cfg.rays.num_azim);
    let _ = writeln!(s, "ray spacing          = {}", fmt(cfg.rays.spacing));
    let _ = writeln!(s, "polar per hemisphere = {}", cfg.rays.polar);
    let _ = writeln!(s, "axial spacing        = {}", fmt(cfg.rays.axial_spacing));
    let _ = writeln!(s, "tracks 2d            = {}", out.stats.num_tracks_2d);
    let _ = writeln!(s, "chains 2d            = {}", out.stats.num_chains);
    let _ = writeln!(s, "tracks 3d            = {}", out.stats.num_tracks_3d);
    let _ = writeln!(s, "segments total       = {}", out.stats.segments_total);
    let _ = writeln!(s, "segment bytes        = {}", out.stats.bytes_total);
    let _ = writeln!(s);
    let _ = writeln!(s, "[storage]");
    let mode = match cfg.mode {
        crate::config::ModeName::Otf => "otf",
        crate::config::ModeName::Explicit => "explicit",
        crate::config::ModeName::Hybrid => "hybrid",
    };
    let _ = writeln!(s, "mode                 = {mode}");
    let _ = writeln!(s, "preloaded tracks     = {}", out.stats.preloaded_tracks);
    let _ = writeln!(s, "preloaded bytes      = {}", out.stats.preloaded_bytes);
    let _ = writeln!(s, "on-the-fly tracks    = {}", out.stats.otf_tracks);
    let _ = writeln!(s);
    let _ = writeln!(s, "[results]");
    let _ = writeln!(s, "k_eff                = {}", fmt(out.k_eff));
    let _ = writeln!(s, "iterations           = {}", out.iterations);
    let _ = writeln!(s, "production           = {}", fmt(out.balance.production));
    let _ = writeln!(s, "absorption           = {}", fmt(out.balance.absorption));
    let _ = writeln!(s, "leakage              = {}", fmt(out.balance.leakage));
    let _ = writeln!(s, "balance residual     = {}", fmt(out.balance.residual));
    if !out.warnings.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "[warnings]");
        for w in &out.warnings {
            let _ = writeln!(s, "- {w}");
        }
    }
    s
}

/// Per-FSR, per-group scalar flux table.
pub fn render_flux_csv(geom: &ExtrudedGeometry, out: &SolveOutput) -> String {
    use std::fmt::Write;
    let groups = geom.num_groups();
    let mut s = String::from("fsr,region,slab,material,volume");
    for g in 0..groups {
        let _ = write!(s, ",flux_g{}", g + 1);
    }
    s.push('\n');
    for fsr in 0..geom.num_fsrs() {
        let (region, slab) = geom.fsr_region_slab(fsr);
        let mat = &geom.materials()[geom.material_of(fsr)].name;
        let _ = write!(s, "{fsr},{region},{slab},{mat},{}", fmt(out.volumes[fsr]));
        for g in 0..groups {
            let _ = write!(s, ",{}", fmt(out.flux[fsr * groups + g]));
        }
        s.push('\n');
    }
    s
}

/// Final-iteration neutron balance.
pub fn render_balance_csv(out: &SolveOutput) -> String {
    let b = &out.balance;
    format!(
        "quantity,value\nk_eff,{}\nproduction,{}\nabsorption,{}\nleakage,{}\nresidual,{}\n",
        fmt(b.k),
        fmt(b.production),
        fmt(b.absorption),
        fmt(b.leakage),
        fmt(b.residual)
    )
}

/// Wall-clock timings. This is the only artifact that varies between
/// otherwise identical runs.
pub fn render_timings_csv(out: &SolveOutput) -> String {
    let t = &out.timings;
    format!(
        "phase,seconds\nsetup,{}\npreload,{}\nsolve,{}\nsweeps,{}\n",
        fmt(t.setup_seconds),
        fmt(t.preload_seconds),
        fmt(t.solve_seconds),
        t.sweeps
    )
}

/// Per-iteration convergence history.
pub fn render_history_csv(out: &SolveOutput) -> String {
    use std::fmt::Write;
    let mut s = String::from("iteration,k,delta_k,source_rms\n");
    for (i, rec) in out.history.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            i + 1,
            fmt(rec.k),
            fmt(rec.delta_k),
            fmt(rec.source_rms)
        );
    }
    s
}
