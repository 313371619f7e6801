//! `polwave`: batch entry points for simulation, reconstruction, material
//! fitting, evaluation and diagnostics.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polwave::reconstruct::Method;

#[derive(Parser, Debug)]
#[command(name = "polwave", version, about = "Polarimetric wavefront lidar pipeline")]
struct Cli {
    /// Worker threads for pixel-parallel stages (0 = all cores).
    #[arg(long, global = true, env = "POLLIDAR_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a wavefront cube and its ground truth.
    Simulate(SimulateArgs),
    /// Recover distance and normal maps from a cube.
    Reconstruct(ReconstructArgs),
    /// Fit per-pixel materials given normals and distances.
    FitMaterials(FitMaterialsArgs),
    /// Compare a result directory against ground truth.
    Eval(EvalArgs),
    /// Rank and conditioning of an acquisition schedule.
    Schedule(ScheduleArgs),
    /// Intensity, DoP and AoP rasters of a cube.
    Diagnostics(DiagnosticsArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scene file; omit to use `--template`.
    pub scene: Option<PathBuf>,
    #[arg(long, conflicts_with = "scene")]
    pub template: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// `off`, `default` or a noise-parameter JSON file.
    #[arg(long, default_value = "default")]
    pub noise: String,
    #[arg(long)]
    pub laser_power: Option<f64>,
    /// Sensor JSON overriding the scene's sensor block.
    #[arg(long)]
    pub sensor: Option<PathBuf>,
    /// Schedule JSON; defaults to the 36-state dual rotating retarder.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Ground-truth directory (default `<cube stem>_gt` beside the cube).
    #[arg(long)]
    pub gt: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    pub cube: PathBuf,
    #[arg(long)]
    pub method: Method,
    #[arg(long)]
    pub out: PathBuf,
    /// Assumed refractive index for `sfp`.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub export_features: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ground-truth directory supplying per-pixel albedos for `modelfit`.
    #[arg(long)]
    pub albedo_from: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitMaterialsArgs {
    pub cube: PathBuf,
    /// Directory with `normal.pfm`, `distance.pfm` and `confidence.pfm`.
    #[arg(long)]
    pub normals: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub albedo_from: Option<PathBuf>,
    /// Ground-truth directory whose `material_id.pfm` defines segments.
    #[arg(long)]
    pub segments_from: Option<PathBuf>,
    /// Replace pixel estimates by their segment mean.
    #[arg(long, requires = "segments_from")]
    pub average: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also append a CSV row to this file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub check: bool,
    /// Schedule JSON; defaults to the built-in schedule.
    #[arg(long)]
    pub file: Option<PathBuf>,
    /// Keep only the first N states.
    #[arg(long)]
    pub states: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DiagnosticsArgs {
    pub cube: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let config = e.chain().any(|c| {
        c.downcast_ref::<polwave::Error>().is_some_and(polwave::Error::is_config)
            || c.downcast_ref::<serde_json::Error>().is_some()
    });
    if config {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads;
    let res = polwave::exec::with_threads(threads, move || match cli.cmd {
        Command::Simulate(a) => commands::simulate(&a, threads),
        Command::Reconstruct(a) => commands::reconstruct(&a, threads),
        Command::FitMaterials(a) => commands::fit_materials(&a, threads),
        Command::Eval(a) => commands::eval(&a, threads),
        Command::Schedule(a) => commands::schedule(&a),
        Command::Diagnostics(a) => commands::diagnostics(&a, threads),
    });
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
