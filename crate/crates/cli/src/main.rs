mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Reconstruct a textured mesh from one image on a tetrahedral shell grid.
///
/// Every command prints a JSON summary on stdout; logs go to stderr
/// (set RUST_LOG to change the level).
#[derive(Debug, Parser)]
#[command(name = "tetra-recon", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; missing fields take the default values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random draw; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory or file, depending on the command.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Render resolution in pixels; overrides the config.
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
    /// Noise predictor used for guidance.
    #[arg(long, global = true, value_enum, default_value_t = ProviderKind::Null)]
    pub score_provider: ProviderKind,
    /// Recorded score stream read by `--score-provider recorded`.
    #[arg(long, global = true, value_name = "DIR")]
    pub scores: Option<PathBuf>,
    /// Record every guidance prediction into this directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub record_scores: Option<PathBuf>,
    /// Per-channel target of `--score-provider gaussian`.
    #[arg(long, global = true, value_delimiter = ',', default_value = "0.5,0.5,0.5")]
    pub gaussian_target: Vec<f64>,
    /// Start from full-scale iteration counts, resolutions and table sizes.
    #[arg(long, global = true)]
    pub paper_scale: bool,
    /// Scalar type for geometry and parameters.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    Null,
    Gaussian,
    Recorded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderMode {
    Normal,
    Mask,
    Albedo,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the shell grid and fit the geometry field to the template.
    InitShell {
        /// Scene directory.
        #[arg(long)]
        scene: PathBuf,
    },
    /// Run the geometry stage into the run directory given by --out.
    FitGeometry {
        #[arg(long)]
        scene: PathBuf,
        /// Continue from the run's geometry checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Run the texture stage on an extracted mesh.
    FitTexture {
        #[arg(long)]
        scene: PathBuf,
        /// Mesh to texture (default: the run's geometry mesh).
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// Canonical-pose mesh in vertex correspondence with --mesh.
        #[arg(long)]
        canonical: Option<PathBuf>,
        /// Continue from the run's texture checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Extract the surface from a run's geometry checkpoint.
    ExtractMesh {
        /// Run directory.
        #[arg(long)]
        run: PathBuf,
    },
    /// Render a mesh to a PNG.
    Render {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, value_enum, default_value_t = RenderMode::Normal)]
        mode: RenderMode,
        /// Use the scene's input camera.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Orbit azimuth in degrees (0 faces the front).
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        azimuth: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        elevation: f64,
        /// Run directory holding the texture checkpoint, for albedo renders.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Write a synthetic scene with known ground truth.
    SynthScene {
        #[arg(long, default_value = "sphere")]
        shape: String,
        #[arg(long, default_value = "smooth")]
        texture: String,
    },
    /// Compare meshes and, optionally, images.
    Eval {
        #[arg(long)]
        recon: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Surface samples per mesh.
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        /// Rendered image (PNG or raw).
        #[arg(long)]
        image: Option<PathBuf>,
        /// Reference image.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Print the guidance prompt for an attribute file and view.
    ComposePrompt {
        #[arg(long)]
        attrs: PathBuf,
        /// front, side, back or overhead.
        #[arg(long, default_value = "front")]
        view: String,
        /// Face close-up.
        #[arg(long)]
        face: bool,
        /// Prompt for normal renders.
        #[arg(long)]
        normal: bool,
        #[arg(long, default_value = "[V]")]
        identifier: String,
    },
    /// Print the run-configuration JSON schema, or write it to --out.
    Schema,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(commands::CliError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(commands::CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
