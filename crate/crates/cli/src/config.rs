//! Run configuration: a YAML file describing which geometry to solve and
//! how — ray density, trace mode, parallelism, tolerances, output location.
//!
//! Unknown keys are rejected so typos fail loudly instead of silently
//! falling back to defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use moc3d_core::solver::{Accumulation, SolveOptions, TraceMode};
use serde::{Deserialize, Serialize};

/// Top-level run configuration. Every field except `geometry` has a default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Path to the geometry YAML file, resolved relative to the directory
    /// containing the config file when loaded via [`RunConfig::load`].
    pub geometry: PathBuf,
    /// Ray discretization parameters.
    #[serde(default)]
    pub rays: RayConfig,
    /// Segment handling: recompute on the fly, preload, or a budgeted mix.
    #[serde(default)]
    pub mode: ModeName,
    /// Segment-storage budget in bytes. Required for `hybrid` mode; an
    /// optional hard cap for `explicit` mode; ignored for `otf`.
    #[serde(default)]
    pub memory_budget: Option<u64>,
    /// Fraction of `memory_budget` the hybrid preload phase may fill.
    #[serde(default = "default_budget_fraction")]
    pub budget_fraction: f64,
    /// Number of worker threads for the transport sweep.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Tally accumulation strategy. `deterministic` gives bitwise-identical
    /// results for any worker count; `fast` trades that for lower overhead.
    #[serde(default)]
    pub accumulation: AccumName,
    /// Use a linear-interpolation table for 1 - exp(-tau) instead of
    /// calling the math library per segment.
    #[serde(default)]
    pub exp_table: bool,
    /// Convergence tolerances for the power iteration.
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Maximum number of outer (power) iterations before giving up.
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Tracks per scheduling chunk for the serpentine work order.
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    /// Directory that receives the output artifacts.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// Ray discretization: azimuthal count, lateral spacing, polar count per
/// hemisphere, and the target axial spacing of the 3D track ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RayConfig {
    #[serde(default = "default_num_azim")]
    pub num_azim: usize,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "default_polar")]
    pub polar: usize,
    #[serde(default = "default_axial_spacing")]
    pub axial_spacing: f64,
}

impl Default for RayConfig {
    fn default() -> Self {
        RayConfig {
            num_azim: default_num_azim(),
            spacing: default_spacing(),
            polar: default_polar(),
            axial_spacing: default_axial_spacing(),
        }
    }
}

/// Trace mode selector as spelled in the config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    #[default]
    Otf,
    Explicit,
    Hybrid,
}

/// Tally accumulation selector as spelled in the config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AccumName {
    #[default]
    Deterministic,
    Fast,
}

/// Convergence tolerances: `k` bounds the eigenvalue change between outers,
/// `source` bounds the RMS relative change of the fission source.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_tol")]
    pub k: f64,
    #[serde(default = "default_tol")]
    pub source: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            k: default_tol(),
            source: default_tol(),
        }
    }
}

fn default_num_azim() -> usize {
    8
}
fn default_spacing() -> f64 {
    0.1
}
fn default_polar() -> usize {
    2
}
fn default_axial_spacing() -> f64 {
    0.25
}
fn default_budget_fraction() -> f64 {
    0.8
}
fn default_workers() -> usize {
    1
}
fn default_tol() -> f64 {
    1e-5
}
fn default_max_iterations() -> usize {
    1000
}
fn default_chunk_size() -> usize {
    4096
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Parse a config file, resolve the geometry path relative to the
    /// config file's directory, and validate the result.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut cfg = Self::parse(&text)
            .with_context(|| format!("parsing config file {}", path.display()))?;
        if cfg.geometry.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.geometry = dir.join(&cfg.geometry);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse config text without touching the filesystem. Paths are left
    /// exactly as written.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_yaml::from_str(text)?;
        Ok(cfg)
    }

    /// Check cross-field constraints that the type system cannot express.
    pub fn validate(&self) -> Result<()> {
        if self.rays.num_azim < 4 || self.rays.num_azim % 4 != 0 {
            bail!(
                "rays.num_azim must be a multiple of 4 (at least 4), got {}",
                self.rays.num_azim
            );
        }
        if !(self.rays.spacing > 0.0) {
            bail!("rays.spacing must be positive, got {}", self.rays.spacing);
        }
        if self.rays.polar == 0 {
            bail!("rays.polar must be at least 1");
        }
        if !(self.rays.axial_spacing > 0.0) {
            bail!("rays.axial_spacing must be positive, got {}", self.rays.axial_spacing);
        }
        if self.mode == ModeName::Hybrid && self.memory_budget.is_none() {
            bail!("mode 'hybrid' requires the 'memory_budget' key (segment storage budget in bytes)");
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            bail!("budget_fraction must be in (0, 1], got {}", self.budget_fraction);
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if !(self.tolerances.k > 0.0) || !(self.tolerances.source > 0.0) {
            bail!("tolerances.k and tolerances.source must be positive");
        }
        if self.max_iterations == 0 {
            bail!("max_iterations must be at least 1");
        }
        if self.chunk_size == 0 {
            bail!("chunk_size must be at least 1");
        }
        Ok(())
    }

    /// Translate the file-level settings into solver options.
    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            num_azim: self.rays.num_azim,
            ray_spacing: self.rays.spacing,
            polar_per_hemisphere: self.rays.polar,
            axial_spacing: self.rays.axial_spacing,
            mode: self.trace_mode(),
            workers: self.workers,
            accumulation: match self.accumulation {
                AccumName::Deterministic => Accumulation::Deterministic,
                AccumName::Fast => Accumulation::Fast,
            },
            use_exp_table: self.exp_table,
            tol_k: self.tolerances.k,
            tol_source: self.tolerances.source,
            max_outers: self.max_iterations,
            chunk_size: self.chunk_size,
        }
    }

    /// The trace mode with its budget attached.
    pub fn trace_mode(&self) -> TraceMode {
        match self.mode {
            ModeName::Otf => TraceMode::OnTheFly,
            ModeName::Explicit => TraceMode::Explicit {
                budget: self.memory_budget,
            },
            ModeName::Hybrid => TraceMode::Hybrid {
                // validate() guarantees the budget is present for hybrid.
                budget: self.memory_budget.unwrap_or(0),
                fraction: self.budget_fraction,
            },
        }
    }

    /// Re-emit the fully resolved configuration as YAML (defaults filled
    /// in, geometry path as resolved).
    pub fn to_effective_yaml(&self) -> Result<String> {
        Ok(serde_yaml::to_string(self)?)
    }
}
