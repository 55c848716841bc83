//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Three operations: orbit a procedural scene, plot a ReLU-field profile
//! across one cell, and watch a grid being reconstructed batch by batch.

use std::borrow::Cow;

use remix3d::reconstruction::{ReconConfig, Reconstructor};
use remix3d::renderer::{render_image, PoseModel, RenderConfig};
use remix3d::scene_io::{dataset_focal, make_synthetic_scene, render_dataset, SceneKind};
use remix3d::seed::{rng_from_seed, Rng};
use remix3d::relu_field::activate;
use remix3d::{psnr, FeatureGrid, Image};
use wasm_bindgen::prelude::*;

fn js<E: std::fmt::Display>(e: E) -> JsError {
    JsError::new(&e.to_string())
}

/// RGBA bytes for an `ImageData`.
fn rgba(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.width() * img.height() * 4);
    for px in img.data().chunks_exact(3) {
        out.extend(px.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out.push(255);
    }
    out
}

fn orbit_render(grid: &FeatureGrid, azimuth_deg: f64, elevation_deg: f64, size: usize, samples: usize) -> Result<Image, JsError> {
    let size = size.clamp(8, 512);
    let pose = PoseModel::for_aabb(grid.aabb(), dataset_focal(size), 1, size as u32, size as u32).map_err(js)?;
    let cam = pose
        .camera_at(azimuth_deg.to_radians(), elevation_deg.to_radians(), 0)
        .map_err(js)?;
    let cfg = RenderConfig {
        samples_per_ray: samples.clamp(4, 512),
        ..RenderConfig::evaluation(grid.aabb())
    };
    Ok(render_image(grid, &cam, &cfg))
}

/// A voxelized procedural scene that can be rendered from any orbit angle.
#[wasm_bindgen]
pub struct SceneView {
    grid: FeatureGrid,
}

#[wasm_bindgen]
impl SceneView {
    /// `kind` is `boxes`, `spheres` or `mixed`.
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, count: usize, resolution: usize, seed: u64) -> Result<SceneView, JsError> {
        let kind: SceneKind = kind.parse().map_err(js)?;
        let scene = make_synthetic_scene(kind, count, resolution, seed).map_err(js)?;
        Ok(SceneView {
            grid: scene.ground_truth_grid,
        })
    }

    /// RGBA pixels of a `size`×`size` render.
    pub fn render(&self, azimuth_deg: f64, elevation_deg: f64, size: usize, samples: usize) -> Result<Vec<u8>, JsError> {
        orbit_render(&self.grid, azimuth_deg, elevation_deg, size, samples).map(|img| rgba(&img))
    }
}

/// Field values across one cell whose end nodes hold raw values `a` and `b`:
/// `n` triples of (t, interpolate-then-activate, activate-then-interpolate).
#[wasm_bindgen]
pub fn relu_profile(a: f64, b: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    let mut out = Vec::with_capacity(3 * n);
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        out.push(t);
        out.push(activate((1.0 - t) * a + t * b));
        out.push((1.0 - t) * activate(a) + t * activate(b));
    }
    out
}

/// Coarse-to-fine reconstruction of a procedural scene from its own renders,
/// advanced a few batches per animation frame.
#[wasm_bindgen]
pub struct LiveReconstruction {
    run: Reconstructor<'static>,
    rng: Rng,
    last_loss: f64,
    batches: usize,
}

#[wasm_bindgen]
impl LiveReconstruction {
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, seed: u64, views: usize, image_size: usize, final_res: usize) -> Result<LiveReconstruction, JsError> {
        let kind: SceneKind = kind.parse().map_err(js)?;
        let scene = make_synthetic_scene(kind, 12, 32, seed).map_err(js)?;
        let set = render_dataset(&scene, views, image_size, seed ^ 1).map_err(js)?;
        let cfg = ReconConfig {
            final_resolution: [final_res; 3],
            start_divisor: 8,
            rays_per_batch: 512,
            batches_per_level: 150,
            samples_per_ray: 64,
            ..Default::default()
        };
        Ok(LiveReconstruction {
            run: Reconstructor::new(Cow::Owned(set), &cfg).map_err(js)?,
            rng: rng_from_seed(seed),
            last_loss: f64::NAN,
            batches: 0,
        })
    }

    /// Runs up to `n` batches; returns the loss of the last one.
    pub fn step(&mut self, n: usize) -> Result<f64, JsError> {
        for _ in 0..n {
            if self.run.is_done() {
                break;
            }
            self.last_loss = self.run.step(&mut self.rng).map_err(js)?.loss;
            self.batches += 1;
        }
        Ok(self.last_loss)
    }

    pub fn done(&self) -> bool {
        self.run.is_done()
    }

    pub fn batches(&self) -> usize {
        self.batches
    }

    /// Current grid resolution per axis.
    pub fn resolution(&self) -> usize {
        self.run.grid().dims()[0]
    }

    pub fn views(&self) -> usize {
        self.run.dataset().len()
    }

    /// RGBA pixels of training view `view`.
    pub fn target(&self, view: usize) -> Result<Vec<u8>, JsError> {
        let images = self.run.dataset().images();
        images.get(view).map(rgba).ok_or_else(|| JsError::new("no such view"))
    }

    /// RGBA pixels of the current grid seen from training view `view`.
    pub fn render_view(&self, view: usize) -> Result<Vec<u8>, JsError> {
        Ok(rgba(&self.view_image(view)?))
    }

    /// PSNR of the current grid against training view `view`.
    pub fn view_psnr(&self, view: usize) -> Result<f64, JsError> {
        let rendered = self.view_image(view)?;
        psnr(&rendered, &self.run.dataset().images()[view]).map_err(js)
    }

    pub fn image_size(&self) -> usize {
        self.run.dataset().image_size().0
    }

    fn view_image(&self, view: usize) -> Result<Image, JsError> {
        let cam = self.run.dataset().cameras().get(view).ok_or_else(|| JsError::new("no such view"))?;
        let grid = self.run.grid();
        Ok(render_image(grid, cam, &RenderConfig::evaluation(grid.aabb())))
    }
}
