//! Coarse-to-fine photometric fitting of a feature grid to posed images.

use std::borrow::Cow;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::image::psnr;
use crate::nn::{Adam, AdamConfig};
use crate::relu_field::{Aabb, FeatureGrid, CHANNELS};
use crate::renderer::{march_ray_vjp, pixel_ray, render_image, RenderConfig, SamplingPolicy};
use crate::scene_io::PosedImageSet;
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    /// `[nx, ny, nz]` of the final grid.
    pub final_resolution: [usize; 3],
    pub start_divisor: usize,
    pub rays_per_batch: usize,
    pub batches_per_level: usize,
    /// Learning rate at the coarsest level.
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub adam_betas: [f64; 2],
    /// Learning-rate multiplier applied at every new level.
    pub lr_decay: f64,
    /// Raw value every node starts from, `[density, r, g, b]`.
    pub init_raw: [f32; CHANNELS],
    pub samples_per_ray: usize,
    pub aabb: Aabb,
    /// Record the batch loss every this many batches (the last batch of a
    /// level is always recorded).
    pub log_every: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            final_resolution: [128; 3],
            start_divisor: 16,
            rays_per_batch: 2048,
            batches_per_level: 20_000,
            learning_rate: 0.03,
            optimizer: Optimizer::Adam,
            adam_betas: [0.9, 0.999],
            lr_decay: 0.5,
            init_raw: [0.05, 0.5, 0.5, 0.5],
            samples_per_ray: 128,
            aabb: Aabb::unit(),
            log_every: 100,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.start_divisor;
        if d == 0 || !d.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("start_divisor {d} is not a power of two")));
        }
        for &n in &self.final_resolution {
            if n % d != 0 || n / d < 2 {
                return Err(Error::InvalidArgument(format!(
                    "final resolution {:?} must be divisible by start_divisor {d} with at least 2 nodes per axis at the coarsest level",
                    self.final_resolution
                )));
            }
        }
        if self.rays_per_batch == 0 {
            return Err(Error::InvalidArgument("rays_per_batch must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.lr_decay > 0.0) {
            return Err(Error::InvalidArgument("learning rate and decay must be positive".into()));
        }
        if self.samples_per_ray < 2 {
            return Err(Error::InvalidArgument("samples_per_ray must be at least 2".into()));
        }
        Ok(())
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            samples_per_ray: self.samples_per_ray,
            policy: SamplingPolicy::Stratified,
            ..RenderConfig::training(&self.aabb)
        }
    }
}

/// Grid resolutions visited from coarsest to finest.
pub fn level_schedule(final_resolution: [usize; 3], start_divisor: usize) -> Vec<[usize; 3]> {
    let mut levels = Vec::new();
    let mut res = final_resolution.map(|n| n / start_divisor.max(1));
    loop {
        levels.push(res);
        if res[0] >= final_resolution[0] {
            break;
        }
        res = res.map(|n| 2 * n);
    }
    levels
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub level: usize,
    pub batch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub grid: FeatureGrid,
    pub log: Vec<LogRecord>,
    /// Loss of the last batch of every level.
    pub level_final_loss: Vec<f64>,
}

pub fn reconstruct(dataset: &PosedImageSet, cfg: &ReconConfig, rng: &mut Rng) -> Result<Reconstruction> {
    reconstruct_with(dataset, cfg, rng, |_| {})
}

/// [`reconstruct`] with a callback receiving every logged record as it is
/// produced.
pub fn reconstruct_with(
    dataset: &PosedImageSet,
    cfg: &ReconConfig,
    rng: &mut Rng,
    mut on_record: impl FnMut(&LogRecord),
) -> Result<Reconstruction> {
    let mut r = Reconstructor::new(Cow::Borrowed(dataset), cfg)?;
    let mut log = Vec::new();
    while !r.is_done() {
        let rec = r.step(rng)?;
        if rec.batch % cfg.log_every.max(1) == 0 || rec.batch + 1 == cfg.batches_per_level {
            on_record(&rec);
            log.push(rec);
        }
    }
    Ok(Reconstruction {
        grid: r.grid,
        log,
        level_final_loss: r.level_final_loss,
    })
}

/// The coarse-to-fine optimization one batch at a time. Each level starts
/// from the 2x upsampled grid of the previous one with a fresh Adam state
/// and a decayed learning rate.
pub struct Reconstructor<'a> {
    dataset: Cow<'a, PosedImageSet>,
    cfg: ReconConfig,
    levels: Vec<[usize; 3]>,
    level: usize,
    batch: usize,
    lr: f64,
    grid: FeatureGrid,
    adam: Adam,
    grad: Vec<f64>,
    picks: Vec<usize>,
    base_render: RenderConfig,
    level_final_loss: Vec<f64>,
}

impl<'a> Reconstructor<'a> {
    pub fn new(dataset: Cow<'a, PosedImageSet>, cfg: &ReconConfig) -> Result<Self> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("dataset has no images".into()));
        }
        for cam in dataset.cameras() {
            cam.validate()?;
        }
        let levels = level_schedule(cfg.final_resolution, cfg.start_divisor);
        let grid = FeatureGrid::filled(levels[0], cfg.aabb, cfg.init_raw)?;
        let lr = cfg.learning_rate;
        Ok(Reconstructor {
            dataset,
            adam: Self::optimizer(cfg, lr, &grid),
            grad: vec![0f64; grid.data().len()],
            picks: Vec::with_capacity(cfg.rays_per_batch),
            base_render: cfg.render_config(),
            cfg: cfg.clone(),
            levels,
            level: 0,
            batch: 0,
            lr,
            grid,
            level_final_loss: Vec::new(),
        })
    }

    fn optimizer(cfg: &ReconConfig, lr: f64, grid: &FeatureGrid) -> Adam {
        Adam::new(AdamConfig::new(lr, cfg.adam_betas[0], cfg.adam_betas[1]), [grid.data().len()])
    }

    pub fn grid(&self) -> &FeatureGrid {
        &self.grid
    }

    pub fn dataset(&self) -> &PosedImageSet {
        &self.dataset
    }

    pub fn levels(&self) -> &[[usize; 3]] {
        &self.levels
    }

    /// Index of the level the next batch belongs to.
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn is_done(&self) -> bool {
        self.level == self.levels.len()
    }

    /// Runs one batch and returns its record. Moves to the next level after
    /// the last batch of a level.
    pub fn step(&mut self, rng: &mut Rng) -> Result<LogRecord> {
        if self.is_done() {
            return Err(Error::InvalidArgument("reconstruction already finished".into()));
        }
        let (level, batch) = (self.level, self.batch);
        let cfg = &self.cfg;
        let (w, h) = self.dataset.image_size();
        let pixels_per_image = w * h;
        let total_pixels = pixels_per_image * self.dataset.len();
        self.picks.clear();
        self.picks.extend((0..cfg.rays_per_batch).map(|_| rng.random_range(0..total_pixels)));
        let render = RenderConfig {
            seed: rng.random(),
            ..self.base_render.clone()
        };
        self.grad.fill(0.0);
        let norm = 1.0 / (3 * cfg.rays_per_batch) as f64;
        let mut sse = 0.0;
        for &p in &self.picks {
            let (img, px) = (p / pixels_per_image, p % pixels_per_image);
            let (u, v) = (px % w, px / w);
            let target = self.dataset.images()[img].pixel(u, v);
            let ray = pixel_ray(&self.dataset.cameras()[img], u, v, &cfg.aabb);
            march_ray_vjp(
                &self.grid,
                &ray,
                &render,
                p as u64,
                |rgb| {
                    let mut d = [0.0; 3];
                    for c in 0..3 {
                        let e = rgb[c] - target[c] as f64;
                        sse += e * e;
                        d[c] = 2.0 * e * norm;
                    }
                    d
                },
                &mut self.grad,
            );
        }
        let loss = sse * norm;
        if !loss.is_finite() {
            return Err(Error::NumericalAbort(format!(
                "reconstruction loss is {loss} at level {level}, batch {batch}"
            )));
        }
        self.adam.step_flat(self.grid.data_mut(), &self.grad);
        self.grid.data_mut().iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        self.batch += 1;
        if self.batch == cfg.batches_per_level {
            self.level_final_loss.push(loss);
            self.level += 1;
            self.batch = 0;
            if !self.is_done() {
                self.grid = self.grid.upsample2x();
                self.lr *= cfg.lr_decay;
                self.adam = Self::optimizer(cfg, self.lr, &self.grid);
                self.grad = vec![0f64; self.grid.data().len()];
            }
        }
        Ok(LogRecord { level, batch, loss })
    }
}

/// Mean PSNR over the views of `set` rendered with `cfg`.
pub fn mean_psnr(grid: &FeatureGrid, set: &PosedImageSet, cfg: &RenderConfig) -> Result<f64> {
    let mut total = 0.0;
    for (img, cam) in set.images().iter().zip(set.cameras()) {
        total += psnr(&render_image(grid, cam, cfg), img)?;
    }
    Ok(total / set.len() as f64)
}
