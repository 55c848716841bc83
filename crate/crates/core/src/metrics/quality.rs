use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::relu_field::FeatureGrid;
use crate::remix_gan::{generate, GeneratorStack};
use crate::renderer::{render_image, render_patch_2d, PoseModel, RenderConfig};
use crate::seed::{derive_seed, mix, rng_from, rng_from_seed};

use super::extractor::FeatureExtractor;
use super::frechet::frechet_distance;

/// Anything that turns a seed into a feature grid.
pub trait GridSampler {
    fn sample(&self, seed: u64) -> Result<FeatureGrid>;
}

impl GridSampler for GeneratorStack {
    /// The full-resolution output for noise drawn from `seed`.
    fn sample(&self, seed: u64) -> Result<FeatureGrid> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("untrained stack: it has no stages".into()));
        }
        let z = self.sample_noise(&mut rng_from_seed(seed))?;
        generate(self, &z, self.len() - 1)
    }
}

/// A fixed grid with uniform noise of the given amplitude added to the raw
/// colors, a new draw per seed.
#[derive(Clone, Debug)]
pub struct PerturbedGrid {
    pub grid: FeatureGrid,
    pub amplitude: f32,
}

impl GridSampler for PerturbedGrid {
    fn sample(&self, seed: u64) -> Result<FeatureGrid> {
        let mut rng = rng_from_seed(seed);
        let mut grid = self.grid.clone();
        if self.amplitude > 0.0 {
            let values = grid.values_mut();
            for c in 1..values.channels() {
                for v in values.channel_mut(c) {
                    *v += rng.random_range(-self.amplitude..=self.amplitude);
                }
            }
        }
        Ok(grid)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub n_views: usize,
    pub n_seeds: usize,
    pub master_seed: u64,
    /// Side of the square diversity window, clipped to the image.
    pub patch_size: usize,
    /// `[azimuth, elevation]` in radians of the diversity camera.
    pub diversity_view: [f64; 2],
    pub samples_per_ray: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            n_views: 16,
            n_seeds: 16,
            master_seed: 0,
            patch_size: 32,
            diversity_view: [0.6, std::f64::consts::FRAC_PI_4],
            samples_per_ray: 128,
        }
    }
}

impl MetricsConfig {
    fn render_config(&self, grid: &FeatureGrid) -> RenderConfig {
        RenderConfig {
            samples_per_ray: self.samples_per_ray,
            ..RenderConfig::evaluation(grid.aabb())
        }
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Fixed camera and pixel window for the diversity metric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchSpec {
    pub azimuth: f64,
    pub elevation: f64,
    pub corner: [usize; 2],
    pub size: [usize; 2],
}

impl PatchSpec {
    /// A centered `side × side` window (clipped to the image) seen from
    /// `cfg.diversity_view`.
    pub fn centered(pose_model: &PoseModel, cfg: &MetricsConfig) -> Self {
        let (w, h) = (pose_model.width as usize, pose_model.height as usize);
        let size = [cfg.patch_size.clamp(1, w), cfg.patch_size.clamp(1, h)];
        PatchSpec {
            azimuth: cfg.diversity_view[0],
            elevation: cfg.diversity_view[1],
            corner: [(w - size[0]) / 2, (h - size[1]) / 2],
            size,
        }
    }
}

fn final_stage(pose_model: &PoseModel) -> usize {
    pose_model.stages() - 1
}

/// Mean over views of the Fréchet distance between feature statistics of a
/// reference render and a render of one fixed-seed sample. Cameras are drawn
/// from the pose model at its final stage.
pub fn visual_quality(
    reference: &FeatureGrid,
    sampler: &dyn GridSampler,
    pose_model: &PoseModel,
    extractor: &FeatureExtractor,
    cfg: &MetricsConfig,
) -> Result<f64> {
    if cfg.n_views < 2 {
        return Err(Error::InvalidArgument(format!("visual quality needs n_views >= 2, got {}", cfg.n_views)));
    }
    let sample = sampler.sample(derive_seed(cfg.master_seed, "quality-sample"))?;
    let mut pose_rng = rng_from(cfg.master_seed, "quality-views");
    let mut total = 0.0;
    for _ in 0..cfg.n_views {
        let (az, el) = pose_model.sample_angles(&mut pose_rng);
        let cam = pose_model.camera_at(az, el, final_stage(pose_model))?;
        let real = render_image(reference, &cam, &cfg.render_config(reference));
        let fake = render_image(&sample, &cam, &cfg.render_config(&sample));
        let (m1, c1) = extractor.statistics(&real);
        let (m2, c2) = extractor.statistics(&fake);
        total += frechet_distance(&m1, &c1, &m2, &c2)?;
    }
    Ok(total / cfg.n_views as f64)
}

/// Mean over pixels and channels of the across-image population variance.
pub fn patch_variance(patches: &[Image]) -> Result<f64> {
    if patches.len() < 2 {
        return Err(Error::InvalidArgument(format!("variance needs at least 2 samples, got {}", patches.len())));
    }
    let n = patches[0].data().len();
    if patches.iter().any(|p| p.width() != patches[0].width() || p.height() != patches[0].height()) {
        return Err(Error::ShapeMismatch("patches differ in size".into()));
    }
    let k = patches.len() as f64;
    let mut total = 0.0;
    for i in 0..n {
        let mean = patches.iter().map(|p| p.data()[i] as f64).sum::<f64>() / k;
        total += patches.iter().map(|p| (p.data()[i] as f64 - mean).powi(2)).sum::<f64>() / k;
    }
    Ok(total / n.max(1) as f64)
}

/// Variance of one rendered window over `n_seeds` samples.
pub fn scene_diversity(
    sampler: &dyn GridSampler,
    pose_model: &PoseModel,
    patch: &PatchSpec,
    n_seeds: usize,
    cfg: &MetricsConfig,
) -> Result<f64> {
    if n_seeds < 2 {
        return Err(Error::InvalidArgument(format!("scene diversity needs n_seeds >= 2, got {n_seeds}")));
    }
    let cam = pose_model.camera_at(patch.azimuth, patch.elevation, final_stage(pose_model))?;
    let base = derive_seed(cfg.master_seed, "diversity-seeds");
    let mut patches = Vec::with_capacity(n_seeds);
    for i in 0..n_seeds {
        let grid = sampler.sample(mix(base, i as u64))?;
        patches.push(render_patch_2d(&grid, &cam, &cfg.render_config(&grid), patch.corner, patch.size)?);
    }
    patch_variance(&patches)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub visual_quality: f64,
    pub scene_diversity: f64,
    pub n_views: usize,
    pub n_seeds: usize,
    pub extractor: String,
    pub feature_dim: usize,
    pub master_seed: u64,
    pub checkpoint_hash: String,
    pub config_hash: String,
    /// Divisor of the diversity variance.
    pub diversity_convention: String,
}

pub fn evaluate_report(
    reference: &FeatureGrid,
    stack: &GeneratorStack,
    pose_model: &PoseModel,
    cfg: &MetricsConfig,
) -> Result<EvaluationReport> {
    let extractor = FeatureExtractor::random_v1();
    let visual_quality = visual_quality(reference, stack, pose_model, &extractor, cfg)?;
    let patch = PatchSpec::centered(pose_model, cfg);
    let scene_diversity = scene_diversity(stack, pose_model, &patch, cfg.n_seeds, cfg)?;
    Ok(EvaluationReport {
        visual_quality,
        scene_diversity,
        n_views: cfg.n_views,
        n_seeds: cfg.n_seeds,
        extractor: extractor.name().into(),
        feature_dim: extractor.dim(),
        master_seed: cfg.master_seed,
        checkpoint_hash: stack.hash(),
        config_hash: cfg.hash(),
        diversity_convention: "population (divide by n_seeds)".into(),
    })
}
