//! The run configuration document and its resolution.

use std::fs;
use std::path::{Path, PathBuf};

use remix3d::metrics::MetricsConfig;
use remix3d::reconstruction::ReconConfig;
use remix3d::remix_gan::{GanConfig, GeneratorConfig, LossWeights};
use remix3d::scene_io::{dataset_focal, SceneKind};
use remix3d::{Aabb, PoseModel, RenderConfig};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub kind: SceneKind,
    pub count: usize,
    pub resolution: usize,
    pub views: usize,
    pub image_size: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            kind: SceneKind::Boxes,
            count: 20,
            resolution: 64,
            views: 16,
            image_size: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    /// Turntable frames rendered per sample.
    pub frames: usize,
    /// Elevation of the turntable orbit, degrees.
    pub elevation_deg: f64,
    /// Per-axis multiplier of the training noise extent.
    pub retarget: [usize; 3],
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            frames: 8,
            elevation_deg: 30.0,
            retarget: [1, 1, 1],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Dataset manifest read by `reconstruct`.
    pub dataset: Option<PathBuf>,
    /// Reference grid read by `train` and `evaluate`.
    pub reference: Option<PathBuf>,
    /// Checkpoint directory read by `sample`, `retarget` and `evaluate`.
    pub checkpoint: Option<PathBuf>,
    /// Grid file read by `render`.
    pub grid: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Every random stream of a command is derived from this seed.
    pub master_seed: u64,
    pub scene: SceneConfig,
    pub reconstruction: ReconConfig,
    /// Every `hold_out_every`-th view is held out of reconstruction; 0 keeps all.
    pub hold_out_every: usize,
    pub generator: GeneratorConfig,
    pub gan: GanConfig,
    pub loss_weights: LossWeights,
    /// Camera distribution for training and metrics; `null` derives it from
    /// the grid AABB and `scene.image_size`.
    pub pose: Option<PoseModel>,
    /// Renderer settings for `sample`, `render` and `retarget`; `null` uses
    /// deterministic evaluation rendering.
    pub render: Option<RenderConfig>,
    pub sample: SampleConfig,
    pub metrics: MetricsConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            master_seed: 0,
            scene: SceneConfig::default(),
            reconstruction: ReconConfig::default(),
            hold_out_every: 8,
            generator: GeneratorConfig::default(),
            gan: GanConfig::default(),
            loss_weights: LossWeights::default(),
            pose: None,
            render: None,
            sample: SampleConfig::default(),
            metrics: MetricsConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text =
            fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.reconstruction.validate()?;
        self.generator.validate()?;
        self.gan.validate()?;
        self.loss_weights.validate()?;
        if let Some(p) = &self.pose {
            p.validate()?;
        }
        if let Some(r) = &self.render {
            r.validate()?;
        }
        if self.sample.retarget.contains(&0) {
            return Err(Failure::Usage("retarget multipliers must be positive".into()));
        }
        if self.hold_out_every == 1 {
            return Err(Failure::Usage("hold_out_every must be 0 or at least 2".into()));
        }
        Ok(())
    }

    pub fn pose_model(&self, aabb: &Aabb) -> Result<PoseModel, Failure> {
        match &self.pose {
            Some(p) => Ok(p.clone()),
            None => {
                let size = self.scene.image_size;
                Ok(PoseModel::for_aabb(aabb, dataset_focal(size), self.gan.stages, size as u32, size as u32)?)
            }
        }
    }

    pub fn render_config(&self, aabb: &Aabb) -> RenderConfig {
        self.render.clone().unwrap_or_else(|| RenderConfig::evaluation(aabb))
    }

    pub fn write_resolved(&self, out: &Path) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Failure::Usage(e.to_string()))?;
        crate::write_file(&out.join(RESOLVED_CONFIG), text.as_bytes())
    }
}

pub const RESOLVED_CONFIG: &str = "config.resolved.json";
