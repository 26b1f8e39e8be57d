//! Command-line interface: object insertion, environment-map baking, light
//! probes, inverse-lighting fitting, and gradient verification.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hlf",
    about = "Hybrid sky + volume light fields: differentiable object insertion and inverse lighting",
    version
)]
struct Cli {
    /// Override every seed in the loaded configs.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for rendering and gradient passes (0 = automatic).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Override the render quality preset of the loaded scene.
    #[arg(long, global = true, value_enum)]
    quality: Option<QualityArg>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum QualityArg {
    Draft,
    Paper,
    Final,
}

impl From<QualityArg> for hlf_core::io::Quality {
    fn from(q: QualityArg) -> Self {
        match q {
            QualityArg::Draft => hlf_core::io::Quality::Draft,
            QualityArg::Paper => hlf_core::io::Quality::Paper,
            QualityArg::Final => hlf_core::io::Quality::Final,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Insert the configured object into the image and write all
    /// composition buffers.
    Insert {
        #[arg(long)]
        scene: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Bake the light field at a point into an equirect HDR environment map.
    Bake {
        /// HLF1 container path.
        #[arg(long)]
        lighting: PathBuf,
        /// World-space bake location as x,y,z.
        #[arg(long)]
        at: String,
        /// Map resolution as HxW (rows x columns), default 64x256.
        #[arg(long, default_value = "64x256")]
        res: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Insert a probe sphere to visualize the lighting at a point.
    Probe {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum, default_value_t = ProbeMaterial::Specular)]
        material: ProbeMaterial,
        /// Probe center as x,y,z.
        #[arg(long)]
        at: String,
        /// Probe radius in meters.
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover lighting parameters from observations by gradient descent.
    Fit {
        /// Observation set (JSON).
        #[arg(long)]
        obs: PathBuf,
        /// Initialization: "random", "seeded", or a .hlf container path.
        #[arg(long, default_value = "seeded")]
        init: String,
        /// Fit configuration (JSON); defaults apply when omitted.
        #[arg(long)]
        cfg: Option<PathBuf>,
        /// Output light-field container.
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Verify hand-written gradients against finite differences.
    Gradcheck {
        /// Scene config to check (small scenes only); a built-in randomized
        /// scene is used when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Relative tolerance.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-4)]
        fd_step: f64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum ProbeMaterial {
    Specular,
    Diffuse,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: could not configure {} threads: {e}", cli.threads);
            return ExitCode::from(1);
        }
    }
    let threads = if cli.threads > 0 {
        cli.threads
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    };
    let ctx = commands::Ctx {
        seed: cli.seed,
        quality: cli.quality.map(Into::into),
        bands: threads,
    };

    let result = match cli.command {
        Command::Insert { scene, out } => commands::insert(&ctx, &scene, &out),
        Command::Bake { lighting, at, res, out } => commands::bake(&ctx, &lighting, &at, &res, &out),
        Command::Probe { scene, material, at, radius, out } => {
            commands::probe(&ctx, &scene, material, &at, radius, &out)
        }
        Command::Fit { obs, init, cfg, out, trace } => {
            commands::fit(&ctx, &obs, &init, cfg.as_deref(), &out, trace.as_deref())
        }
        Command::Gradcheck { scene, tolerance, fd_step } => {
            commands::gradcheck(&ctx, scene.as_deref(), tolerance, fd_step)
        }
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match &e {
                hlf_core::Error::Numerical(_) => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
