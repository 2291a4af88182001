//! `grm`: reproducible workflows over the reconstruction library.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "grm", version, about = "Sparse-view Gaussian reconstruction workflows")]
#[command(after_help = "Outputs go to --out, or a timestamped directory under $GRM_OUTPUT_ROOT (default ./runs).")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration; every key has a default
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Run directory (created if missing)
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Dotted overrides applied after the file, e.g. train.steps=100
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a deterministic procedural multi-view dataset
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the reconstructor on a generated dataset
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Predict Gaussians from input views and write a PLY
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Scene directory from gen-data; its input views are used
        #[arg(long, conflicts_with_all = ["images", "cameras"])]
        scene: Option<PathBuf>,
        /// Input images (.png or [H, W, 3] .npy), one per camera
        #[arg(long, num_args = 1.., requires = "cameras")]
        images: Vec<PathBuf>,
        /// Camera file matching --images
        #[arg(long)]
        cameras: Option<PathBuf>,
        /// Model checkpoint (default paths.weights)
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Render a Gaussian PLY from every camera in a camera file
    Render {
        #[command(flatten)]
        common: Common,
        /// Gaussian PLY to render
        #[arg(long)]
        ply: PathBuf,
        /// Camera JSON file
        #[arg(long)]
        cameras: PathBuf,
    },
    /// Fit one Gaussian per pixel of a scene's input views directly
    SsoFit {
        #[command(flatten)]
        common: Common,
        /// Scene directory from gen-data
        #[arg(long)]
        scene: PathBuf,
    },
    /// Fuse renders of a Gaussian PLY into a mesh
    ExtractMesh {
        #[command(flatten)]
        common: Common,
        /// Gaussian PLY to fuse
        #[arg(long)]
        ply: PathBuf,
    },
    /// Score a checkpoint on the held-out scenes of a dataset
    Eval {
        #[command(flatten)]
        common: Common,
        /// Model checkpoint (default paths.weights)
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Compare rasterizer gradients with finite differences
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        scenes: usize,
        #[arg(long, default_value_t = 8)]
        gaussians: usize,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        /// Largest accepted relative error
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Paired training runs that each flip one design switch
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Restrict to these switches (repeatable); default ablate.switches
        #[arg(long = "switch", value_name = "SWITCH")]
        switches: Vec<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { common } => commands::gen_data(&common),
        Command::Train { common } => commands::train(&common),
        Command::Reconstruct {
            common,
            scene,
            images,
            cameras,
            weights,
        } => commands::reconstruct(&common, scene, &images, cameras, weights),
        Command::Render { common, ply, cameras } => commands::render(&common, &ply, &cameras),
        Command::SsoFit { common, scene } => commands::sso_fit(&common, &scene),
        Command::ExtractMesh { common, ply } => commands::extract_mesh(&common, &ply),
        Command::Eval { common, weights } => commands::eval(&common, weights),
        Command::GradCheck {
            common,
            scenes,
            gaussians,
            size,
            eps,
            tol,
        } => commands::grad_check(&common, scenes, gaussians, size, eps, tol),
        Command::Ablate { common, switches } => commands::ablate(&common, &switches),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<grm::Error>()
                .is_some_and(|g| matches!(g, grm::Error::Config(_)))
            {
                eprintln!("see `grm <command> --help`; overrides are dotted keys such as train.steps=100");
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
