//! `moc3d` — a 3D method-of-characteristics k-eigenvalue transport solver
//! for axially extruded geometries.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use moc3d::runner;
use moc3d_core::Error as CoreError;

#[derive(Parser)]
#[command(
    name = "moc3d",
    version,
    about = "3D method-of-characteristics k-eigenvalue transport solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured eigenvalue problem and write result artifacts.
    Run {
        /// Path to the run configuration YAML file.
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build the ray apparatus and report its size without solving.
    Trace {
        /// Path to the run configuration YAML file.
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write every 3D track to tracks.csv.
        #[arg(long)]
        dump_tracks: bool,
    },
    /// Check that the configuration and geometry load cleanly.
    Validate {
        /// Path to the run configuration YAML file.
        config: PathBuf,
    },
}

/// Exit code when the power iteration fails to converge within the
/// configured iteration limit. Distinct from general errors so scripted
/// callers can retry with a larger limit.
const EXIT_NONCONVERGENCE: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, output } => run(config, output.as_deref()),
        Command::Trace {
            config,
            output,
            dump_tracks,
        } => trace(config, output.as_deref(), *dump_tracks),
        Command::Validate { config } => validate(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if let Some(CoreError::NonConvergence {
                iterations,
                last_dk,
                last_rms,
                ..
            }) = err.downcast_ref::<CoreError>()
            {
                eprintln!(
                    "not converged after {iterations} iterations \
                     (last |dk| = {last_dk:.3e}, last source rms = {last_rms:.3e})"
                );
                ExitCode::from(EXIT_NONCONVERGENCE)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(config: &std::path::Path, output: Option<&std::path::Path>) -> anyhow::Result<()> {
    let outcome = runner::run(config, output)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "k_eff = {:.6} after {} iterations",
        outcome.k_eff, outcome.iterations
    );
    println!("artifacts written to {}", outcome.output_dir.display());
    Ok(())
}

fn trace(
    config: &std::path::Path,
    output: Option<&std::path::Path>,
    dump_tracks: bool,
) -> anyhow::Result<()> {
    let outcome = runner::trace(config, output, dump_tracks)?;
    println!(
        "{} 2D tracks in {} chains, {} 3D tracks, {} segment bytes",
        outcome.num_tracks_2d, outcome.num_chains, outcome.num_tracks_3d, outcome.bytes_total
    );
    println!(
        "storage split: {} preloaded tracks ({} bytes), {} on the fly",
        outcome.preloaded_tracks, outcome.preloaded_bytes, outcome.otf_tracks
    );
    println!("report written to {}", outcome.report_path.display());
    if let Some(p) = &outcome.tracks_path {
        println!("tracks written to {}", p.display());
    }
    Ok(())
}

fn validate(config: &std::path::Path) -> anyhow::Result<()> {
    let outcome = runner::validate(config)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "configuration OK: {} materials, {} groups, {} axial slabs, {} flat source regions",
        outcome.num_materials, outcome.num_groups, outcome.num_slabs, outcome.num_fsrs
    );
    Ok(())
}
