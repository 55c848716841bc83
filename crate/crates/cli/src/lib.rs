//! Command-line front end: argument parsing, config resolution and the
//! subcommands. `main` only maps [`Failure`] to exit codes.

pub mod commands;
pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use commands::{cmd_evaluate, cmd_make_scene, cmd_reconstruct, cmd_render, cmd_sample, cmd_train};
pub use config::{RunConfig, RESOLVED_CONFIG};
use remix3d::scene_io::SceneKind;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<remix3d::Error> for Failure {
    fn from(e: remix3d::Error) -> Self {
        match e {
            remix3d::Error::NumericalAbort(m) => Failure::Numerical(format!("numerical abort: {m}")),
            other => Failure::Usage(other.to_string()),
        }
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Usage(e.to_string()))?;
    write_file(path, text.as_bytes())
}

/// `AxBxC` triple of positive integers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triple(pub [usize; 3]);

impl FromStr for Triple {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split('x').collect();
        if parts.len() != 3 {
            return Err(format!("expected AxBxC, got {s:?}"));
        }
        let mut v = [0; 3];
        for (slot, p) in v.iter_mut().zip(parts) {
            *slot = p.parse().map_err(|_| format!("{p:?} is not a positive integer"))?;
            if *slot == 0 {
                return Err("entries must be positive".into());
            }
        }
        Ok(Triple(v))
    }
}

#[derive(Debug, Parser)]
#[command(name = "remix3d", version, about = "Reconstruct a voxel scene from posed images and train a 3D patch GAN that remixes it")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run config; keys not given fall back to defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory for every artifact.
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed (also the metrics seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    /// boxes, spheres or mixed.
    #[arg(long)]
    pub kind: Option<SceneKind>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReconArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Final grid resolution per axis.
    #[arg(long = "final-res")]
    pub final_res: Option<usize>,
    #[arg(long)]
    pub divisor: Option<usize>,
    #[arg(long)]
    pub rays_per_batch: Option<usize>,
    #[arg(long)]
    pub batches_per_level: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub samples_per_ray: Option<usize>,
    #[arg(long)]
    pub hold_out_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Reference grid file.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub stages: Option<usize>,
    /// Generator updates per stage.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub n_critic: Option<usize>,
    #[arg(long)]
    pub lr_generator: Option<f64>,
    #[arg(long)]
    pub lr_critic: Option<f64>,
    /// Generator hidden width.
    #[arg(long)]
    pub width: Option<usize>,
    /// Training noise extent, XxYxZ.
    #[arg(long)]
    pub noise_extent: Option<Triple>,
    #[arg(long)]
    pub critic_width: Option<usize>,
    #[arg(long = "patch-2d")]
    pub patch_2d: Option<usize>,
    #[arg(long = "patch-3d")]
    pub patch_3d: Option<usize>,
    #[arg(long)]
    pub samples_per_ray: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Orbit elevation in degrees.
    #[arg(long)]
    pub elevation: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Voxelize a procedural scene and render a posed dataset of it.
    MakeScene {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scene: SceneArgs,
    },
    /// Fit a feature grid to a posed dataset.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        recon: ReconArgs,
    },
    /// Train the progressive generator on a reference grid (resumable).
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Generate one grid and render a turntable of it.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sample: SampleArgs,
        /// Noise extent multiplier per axis, e.g. 2x1x1.
        #[arg(long)]
        retarget: Option<Triple>,
    },
    /// `sample` with a required noise-shape multiplier.
    Retarget {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sample: SampleArgs,
        /// Noise extent multiplier per axis, e.g. 2x1x1.
        #[arg(long)]
        shape: Triple,
    },
    /// Render a turntable of a grid file.
    Render {
        #[command(flatten)]
        common: Common,
        /// Grid file.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
        /// Orbit elevation in degrees.
        #[arg(long)]
        elevation: Option<f64>,
        #[arg(long)]
        image_size: Option<usize>,
    },
    /// Score a checkpoint for visual quality and scene diversity.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        n_views: Option<usize>,
        #[arg(long)]
        n_seeds: Option<usize>,
    },
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn base_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
        cfg.metrics.master_seed = seed;
    }
    Ok(cfg)
}

fn apply_sample(cfg: &mut RunConfig, args: &SampleArgs) {
    if args.checkpoint.is_some() {
        cfg.paths.checkpoint = args.checkpoint.clone();
    }
    set(&mut cfg.sample.frames, args.frames);
    set(&mut cfg.sample.elevation_deg, args.elevation);
}

/// Merges the config file and flags into the resolved config for `command`.
pub fn resolve(command: &Command) -> Result<(RunConfig, &Path), Failure> {
    let (cfg, out) = match command {
        Command::MakeScene { common, scene } => {
            let mut cfg = base_config(common)?;
            let s = &mut cfg.scene;
            set(&mut s.kind, scene.kind);
            set(&mut s.count, scene.count);
            set(&mut s.resolution, scene.resolution);
            set(&mut s.views, scene.views);
            set(&mut s.image_size, scene.image_size);
            (cfg, &common.out)
        }
        Command::Reconstruct { common, recon } => {
            let mut cfg = base_config(common)?;
            if recon.dataset.is_some() {
                cfg.paths.dataset = recon.dataset.clone();
            }
            let r = &mut cfg.reconstruction;
            set(&mut r.final_resolution, recon.final_res.map(|n| [n; 3]));
            set(&mut r.start_divisor, recon.divisor);
            set(&mut r.rays_per_batch, recon.rays_per_batch);
            set(&mut r.batches_per_level, recon.batches_per_level);
            set(&mut r.learning_rate, recon.learning_rate);
            set(&mut r.samples_per_ray, recon.samples_per_ray);
            set(&mut cfg.hold_out_every, recon.hold_out_every);
            (cfg, &common.out)
        }
        Command::Train { common, train } => {
            let mut cfg = base_config(common)?;
            if train.reference.is_some() {
                cfg.paths.reference = train.reference.clone();
            }
            let g = &mut cfg.gan;
            set(&mut g.stages, train.stages);
            if let Some(n) = train.iterations {
                g.iterations = n;
                g.stage_iterations.clear();
            }
            set(&mut g.n_critic, train.n_critic);
            set(&mut g.lr_generator, train.lr_generator);
            set(&mut g.lr_critic, train.lr_critic);
            set(&mut g.critic_width, train.critic_width);
            set(&mut g.patch_2d, train.patch_2d);
            set(&mut g.patch_3d, train.patch_3d);
            set(&mut g.samples_per_ray, train.samples_per_ray);
            set(&mut cfg.generator.width, train.width);
            set(&mut cfg.generator.noise_extent, train.noise_extent.map(|t| t.0));
            (cfg, &common.out)
        }
        Command::Sample { common, sample, retarget } => {
            let mut cfg = base_config(common)?;
            apply_sample(&mut cfg, sample);
            set(&mut cfg.sample.retarget, retarget.map(|t| t.0));
            (cfg, &common.out)
        }
        Command::Retarget { common, sample, shape } => {
            let mut cfg = base_config(common)?;
            apply_sample(&mut cfg, sample);
            cfg.sample.retarget = shape.0;
            (cfg, &common.out)
        }
        Command::Render {
            common,
            grid,
            frames,
            elevation,
            image_size,
        } => {
            let mut cfg = base_config(common)?;
            if grid.is_some() {
                cfg.paths.grid = grid.clone();
            }
            set(&mut cfg.sample.frames, *frames);
            set(&mut cfg.sample.elevation_deg, *elevation);
            set(&mut cfg.scene.image_size, *image_size);
            (cfg, &common.out)
        }
        Command::Evaluate {
            common,
            checkpoint,
            reference,
            n_views,
            n_seeds,
        } => {
            let mut cfg = base_config(common)?;
            if checkpoint.is_some() {
                cfg.paths.checkpoint = checkpoint.clone();
            }
            if reference.is_some() {
                cfg.paths.reference = reference.clone();
            }
            set(&mut cfg.metrics.n_views, *n_views);
            set(&mut cfg.metrics.n_seeds, *n_seeds);
            (cfg, &common.out)
        }
    };
    cfg.validate()?;
    Ok((cfg, out.as_path()))
}

/// Resolves the config, writes its snapshot into the run directory and runs
/// the command.
pub fn run(cli: &Cli) -> Result<(), Failure> {
    let (cfg, out) = resolve(&cli.command)?;
    fs::create_dir_all(out).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", out.display())))?;
    cfg.write_resolved(out)?;
    match &cli.command {
        Command::MakeScene { .. } => cmd_make_scene(&cfg, out).map(drop),
        Command::Reconstruct { .. } => cmd_reconstruct(&cfg, out).map(drop),
        Command::Train { .. } => cmd_train(&cfg, out).map(drop),
        Command::Sample { .. } | Command::Retarget { .. } => cmd_sample(&cfg, out).map(drop),
        Command::Render { .. } => cmd_render(&cfg, out).map(drop),
        Command::Evaluate { .. } => cmd_evaluate(&cfg, out).map(drop),
    }
}
