//! One function per subcommand. Each takes a resolved [`RunConfig`] and the
//! run directory, writes its artifacts there and returns a summary.

use std::fs;
use std::path::{Path, PathBuf};

use remix3d::metrics::{evaluate_report, EvaluationReport};
use remix3d::reconstruction::{level_schedule, mean_psnr, reconstruct_with, LogRecord};
use remix3d::remix_gan::{
    generate, load_checkpoint, reference_pyramid, save_checkpoint, train_stage, CriticPair, GeneratorStack,
    NoiseGrid, CHECKPOINT_FORMAT, MANIFEST_FILE,
};
use remix3d::renderer::render_image;
use remix3d::scene_io::{encode_grid, load_dataset, make_synthetic_scene, read_grid, render_dataset, save_dataset, write_grid, write_png};
use remix3d::seed::{derive_seed, rng_from};
use remix3d::{Aabb, Camera, FeatureGrid, PoseModel, RenderConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::{write_file, write_json, Failure};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.rfg";
pub const REFERENCE_FILE: &str = "reference.rfg";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const SAMPLE_FILE: &str = "sample.rfg";

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    path.as_deref().ok_or_else(|| Failure::Usage(format!("missing input: pass --{flag} or set paths.{flag}")))
}

pub fn grid_hash(grid: &FeatureGrid) -> String {
    hex::encode(Sha256::digest(encode_grid(grid)))
}

#[derive(Clone, Debug, Serialize)]
pub struct SceneSummary {
    pub manifest: PathBuf,
    pub ground_truth: PathBuf,
    pub views: usize,
}

/// Voxelizes a procedural scene and renders its posed views.
pub fn cmd_make_scene(cfg: &RunConfig, out: &Path) -> Result<SceneSummary, Failure> {
    let s = &cfg.scene;
    let scene = make_synthetic_scene(s.kind, s.count, s.resolution, derive_seed(cfg.master_seed, "scene"))?;
    let set = render_dataset(&scene, s.views, s.image_size, derive_seed(cfg.master_seed, "views"))?;
    let manifest = save_dataset(&set, &out.join("dataset"))?;
    let ground_truth = out.join(GROUND_TRUTH_FILE);
    write_grid(&scene.ground_truth_grid, &ground_truth)?;
    write_json(&out.join("scene.json"), &scene.primitives)?;
    eprintln!("wrote {} views of a {:?} scene to {}", set.len(), s.kind, manifest.display());
    Ok(SceneSummary {
        manifest,
        ground_truth,
        views: set.len(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ReconSummary {
    pub grid: PathBuf,
    pub levels: Vec<[usize; 3]>,
    pub level_final_loss: Vec<f64>,
    pub train_views: usize,
    pub train_psnr: f64,
    pub held_out_views: usize,
    pub held_out_psnr: Option<f64>,
}

/// Fits a feature grid to the dataset, holding out every
/// `hold_out_every`-th view for the PSNR report.
pub fn cmd_reconstruct(cfg: &RunConfig, out: &Path) -> Result<ReconSummary, Failure> {
    let set = load_dataset(required(&cfg.paths.dataset, "dataset")?)?;
    let (train, held) = if cfg.hold_out_every == 0 {
        (set, None)
    } else {
        set.hold_out_every(cfg.hold_out_every)?
    };
    let rc = &cfg.reconstruction;
    let levels = level_schedule(rc.final_resolution, rc.start_divisor);
    eprintln!("levels: {}", levels.iter().map(|l| l[0].to_string()).collect::<Vec<_>>().join(", "));
    let mut log = String::new();
    let mut rng = rng_from(cfg.master_seed, "reconstruct");
    let result = reconstruct_with(&train, rc, &mut rng, |r: &LogRecord| {
        eprintln!("level {} batch {} loss {:.6}", r.level, r.batch, r.loss);
        log.push_str(&serde_json::to_string(r).expect("record serializes"));
        log.push('\n');
    })?;
    write_file(&out.join("reconstruct_log.jsonl"), log.as_bytes())?;
    let grid = out.join(REFERENCE_FILE);
    write_grid(&result.grid, &grid)?;
    let eval = RenderConfig::evaluation(&rc.aabb);
    let summary = ReconSummary {
        grid,
        levels,
        level_final_loss: result.level_final_loss,
        train_views: train.len(),
        train_psnr: mean_psnr(&result.grid, &train, &eval)?,
        held_out_views: held.as_ref().map_or(0, |h| h.len()),
        held_out_psnr: held.as_ref().map(|h| mean_psnr(&result.grid, h, &eval)).transpose()?,
    };
    write_json(&out.join("reconstruct_report.json"), &summary)?;
    match summary.held_out_psnr {
        Some(p) => eprintln!("train PSNR {:.2} dB, held-out PSNR {p:.2} dB", summary.train_psnr),
        None => eprintln!("train PSNR {:.2} dB", summary.train_psnr),
    }
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub stages: usize,
    pub resumed_from: usize,
    pub stage_hashes: Vec<String>,
}

/// Trains the generator stage by stage, writing the checkpoint after every
/// stage. An existing checkpoint in the run directory is resumed: its
/// stages are kept frozen and training continues with the next stage.
/// Stage `k` draws from its own stream, so a resumed run equals an
/// uninterrupted one.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainSummary, Failure> {
    let reference = read_grid(required(&cfg.paths.reference, "reference")?)?;
    let ck_dir = out.join(CHECKPOINT_DIR);
    let mut stack = if ck_dir.join(MANIFEST_FILE).exists() {
        let ck = load_checkpoint(&ck_dir)?;
        if ck.stack.config != cfg.generator {
            return Err(Failure::Usage(format!(
                "checkpoint in {} was trained with a different generator config",
                ck_dir.display()
            )));
        }
        ck.stack
    } else {
        GeneratorStack::new(cfg.generator.clone(), *reference.aabb(), &mut rng_from(cfg.master_seed, "generator"))?
    };
    let resumed_from = stack.len();
    if resumed_from > 0 {
        eprintln!("resuming after {resumed_from} trained stages");
    }
    let pose = cfg.pose_model(reference.aabb())?;
    let pyramid = reference_pyramid(&reference, &stack.config, cfg.gan.stages)?;
    stack.freeze_all();
    for stage in resumed_from..cfg.gan.stages {
        let mut rng = rng_from(cfg.master_seed, &format!("train-stage-{stage}"));
        stack.push_stage(&mut rng);
        let mut critics = CriticPair::new(cfg.gan.critic_width, cfg.gan.critic_layers, &mut rng);
        let mut log = String::new();
        train_stage(
            &mut stack,
            &mut critics,
            &pyramid[stage],
            &pose,
            &cfg.gan,
            &cfg.loss_weights,
            stage,
            &mut rng,
            |r| {
                eprintln!(
                    "stage {} iter {} critic2d {:.4} critic3d {:.4} total {:.4}",
                    r.stage, r.iteration, r.critic2d, r.critic3d, r.total
                );
                log.push_str(&serde_json::to_string(r).expect("record serializes"));
                log.push('\n');
            },
        )?;
        stack.stages[stage].frozen = true;
        write_file(&out.join(format!("train_log_stage{stage}.jsonl")), log.as_bytes())?;
        save_checkpoint(&ck_dir, &stack, &cfg.loss_weights, &cfg.gan, &pose)?;
        eprintln!("stage {stage} done, hash {}", stack.stages[stage].hash());
    }
    if stack.is_empty() {
        return Err(Failure::Usage("gan.stages must be at least 1".into()));
    }
    Ok(TrainSummary {
        checkpoint: ck_dir,
        stages: stack.len(),
        resumed_from,
        stage_hashes: stack.stages.iter().map(|s| s.hash()).collect(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct FrameInfo {
    pub file: String,
    pub azimuth: f64,
    pub elevation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleSummary {
    pub checkpoint_format: String,
    pub checkpoint_hash: String,
    pub noise_extent: [usize; 3],
    pub grid_dims: [usize; 3],
    /// SHA-256 of the sampled grid file; every frame is a render of it.
    pub grid_sha256: String,
    pub grid: PathBuf,
    pub render: RenderConfig,
    pub frames: Vec<FrameInfo>,
}

/// Turntable cameras at the final pose-model stage.
pub fn turntable(pose: &PoseModel, frames: usize, elevation_deg: f64) -> Result<Vec<(f64, f64, Camera)>, Failure> {
    let stage = pose.stages() - 1;
    let el = elevation_deg.to_radians();
    (0..frames)
        .map(|i| {
            let az = 2.0 * std::f64::consts::PI * i as f64 / frames as f64;
            Ok((az, el, pose.camera_at(az, el, stage)?))
        })
        .collect()
}

fn render_frames(
    grid: &FeatureGrid,
    cams: &[(f64, f64, Camera)],
    render: &RenderConfig,
    dir: &Path,
) -> Result<Vec<FrameInfo>, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))?;
    let mut frames = Vec::with_capacity(cams.len());
    for (i, (az, el, cam)) in cams.iter().enumerate() {
        let file = format!("frame_{i:04}.png");
        write_png(&render_image(grid, cam, render), &dir.join(&file))?;
        frames.push(FrameInfo {
            file,
            azimuth: *az,
            elevation: *el,
        });
    }
    Ok(frames)
}

/// Draws one noise grid (scaled by `sample.retarget`), generates one grid
/// and renders a turntable of it.
pub fn cmd_sample(cfg: &RunConfig, out: &Path) -> Result<SampleSummary, Failure> {
    let ck_dir = required(&cfg.paths.checkpoint, "checkpoint")?;
    let ck = load_checkpoint(ck_dir)?;
    let stack = &ck.stack;
    if stack.is_empty() {
        return Err(Failure::Usage(format!("checkpoint {} has no trained stages", ck_dir.display())));
    }
    let base = stack.config.noise_extent;
    let extent = [0, 1, 2].map(|a| base[a] * cfg.sample.retarget[a]);
    let z = NoiseGrid::sample(extent, stack.config.n_z, &mut rng_from(cfg.master_seed, "sample-noise"))?;
    let grid = generate(stack, &z, stack.len() - 1)?;
    let grid_path = out.join(SAMPLE_FILE);
    write_grid(&grid, &grid_path)?;
    let hash = grid_hash(&grid);
    eprintln!("sampled grid {:?} sha256 {hash}", grid.dims());
    let render = cfg.render_config(grid.aabb());
    let pose = match &cfg.pose {
        Some(p) => p.clone(),
        None => retargeted_pose(&ck.pose_model, &stack.aabb, &grid),
    };
    let cams = turntable(&pose, cfg.sample.frames, cfg.sample.elevation_deg)?;
    let frames = render_frames(&grid, &cams, &render, &out.join("frames"))?;
    let summary = SampleSummary {
        checkpoint_format: CHECKPOINT_FORMAT.into(),
        checkpoint_hash: stack.hash(),
        noise_extent: extent,
        grid_dims: grid.dims(),
        grid_sha256: hash,
        grid: grid_path,
        render,
        frames,
    };
    write_json(&out.join("sample.json"), &summary)?;
    Ok(summary)
}

/// The training pose model re-centered on `grid`, its radius grown with the
/// AABB diagonal so retargeted scenes stay framed.
fn retargeted_pose(train: &PoseModel, train_aabb: &Aabb, grid: &FeatureGrid) -> PoseModel {
    let ratio = grid.aabb().diagonal() / train_aabb.diagonal();
    PoseModel {
        center: grid.aabb().center(),
        radius: train.radius * ratio.max(1.0),
        ..train.clone()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RenderSummary {
    pub grid_sha256: String,
    pub render: RenderConfig,
    pub frames: Vec<FrameInfo>,
}

/// Renders a turntable of a grid file.
pub fn cmd_render(cfg: &RunConfig, out: &Path) -> Result<RenderSummary, Failure> {
    let grid = read_grid(required(&cfg.paths.grid, "grid")?)?;
    let pose = cfg.pose_model(grid.aabb())?;
    let render = cfg.render_config(grid.aabb());
    let cams = turntable(&pose, cfg.sample.frames, cfg.sample.elevation_deg)?;
    let frames = render_frames(&grid, &cams, &render, &out.join("frames"))?;
    let summary = RenderSummary {
        grid_sha256: grid_hash(&grid),
        render,
        frames,
    };
    write_json(&out.join("render.json"), &summary)?;
    Ok(summary)
}

/// Scores a checkpoint against its reference grid.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<EvaluationReport, Failure> {
    let ck = load_checkpoint(required(&cfg.paths.checkpoint, "checkpoint")?)?;
    let reference = read_grid(required(&cfg.paths.reference, "reference")?)?;
    let pose = match &cfg.pose {
        Some(p) => p.clone(),
        None => ck.pose_model.clone(),
    };
    let report = evaluate_report(&reference, &ck.stack, &pose, &cfg.metrics)?;
    write_json(&out.join("report.json"), &report)?;
    eprintln!(
        "visual quality {:.6}, scene diversity {:.6}",
        report.visual_quality, report.scene_diversity
    );
    Ok(report)
}
