//! Emission-absorption raymarching and its reverse-mode derivative.
//!
//! For samples `k = 0..N` along the clipped ray with spacing `δ`,
//! `α_k = 1 - exp(-σ_k · scale · δ)`, `T_k = Π_{j<k} (1 - α_j)` and
//! `rgb = Σ T_k α_k c_k + T_N · background`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relu_field::{activate, activate_grad, Aabb, FeatureGrid, Stencil, CHANNELS};
use crate::renderer::Ray;
use crate::seed::{mix, rng_from_seed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingPolicy {
    /// One uniform jitter per stratum.
    Stratified,
    /// One jitter shared by all samples of a ray.
    UniformJitter,
    DeterministicMidpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub samples_per_ray: usize,
    /// Global density multiplier, in inverse scene units.
    pub density_scale: f64,
    pub background_rgb: [f64; 3],
    pub policy: SamplingPolicy,
    /// Base seed for the per-ray jitter streams.
    #[serde(default)]
    pub seed: u64,
    /// Marching stops once transmittance falls below this value; the rest
    /// of the ray is treated as background. Zero disables the cutoff.
    #[serde(default = "default_min_transmittance")]
    pub min_transmittance: f64,
}

fn default_min_transmittance() -> f64 {
    1e-5
}

impl RenderConfig {
    /// 256 deterministic midpoints per ray, black background.
    pub fn evaluation(aabb: &Aabb) -> Self {
        RenderConfig {
            samples_per_ray: 256,
            density_scale: 25.0 / aabb.diagonal(),
            background_rgb: [0.0; 3],
            policy: SamplingPolicy::DeterministicMidpoint,
            seed: 0,
            min_transmittance: default_min_transmittance(),
        }
    }

    /// 128 stratified samples per ray, black background.
    pub fn training(aabb: &Aabb) -> Self {
        RenderConfig {
            samples_per_ray: 128,
            policy: SamplingPolicy::Stratified,
            ..Self::evaluation(aabb)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_ray < 2 {
            return Err(Error::InvalidArgument("samples_per_ray must be at least 2".into()));
        }
        if !(self.density_scale > 0.0) {
            return Err(Error::InvalidArgument("density_scale must be positive".into()));
        }
        if self.background_rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument("background_rgb must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Forward result of one ray with its compositing bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarchTrace {
    pub rgb: [f64; 3],
    /// Transmittance left for the background.
    pub final_transmittance: f64,
    /// `Σ T_k α_k` over the samples.
    pub weight_sum: f64,
}

/// Fractional sample offsets within each stratum.
struct Offsets {
    policy: SamplingPolicy,
    rng: crate::seed::Rng,
    shared: f64,
}

impl Offsets {
    fn new(cfg: &RenderConfig, ray_seed: u64) -> Self {
        let mut rng = rng_from_seed(mix(cfg.seed, ray_seed));
        let shared = match cfg.policy {
            SamplingPolicy::UniformJitter => rng.random::<f64>(),
            _ => 0.5,
        };
        Offsets {
            policy: cfg.policy,
            rng,
            shared,
        }
    }

    #[inline]
    fn next(&mut self) -> f64 {
        match self.policy {
            SamplingPolicy::Stratified => self.rng.random::<f64>(),
            _ => self.shared,
        }
    }
}

#[inline]
fn sample_raw(grid: &FeatureGrid, ray: &Ray, t: f64) -> (Option<Stencil>, [f64; CHANNELS]) {
    let stencil = grid.stencil(ray.at(t));
    let raw = match &stencil {
        Some(s) => grid.apply_stencil(s),
        None => crate::relu_field::OUTSIDE_RAW,
    };
    (stencil, raw)
}

pub fn march_ray(grid: &FeatureGrid, ray: &Ray, cfg: &RenderConfig, ray_seed: u64) -> [f64; 3] {
    march_ray_traced(grid, ray, cfg, ray_seed).rgb
}

pub fn march_ray_traced(grid: &FeatureGrid, ray: &Ray, cfg: &RenderConfig, ray_seed: u64) -> MarchTrace {
    let bg = cfg.background_rgb;
    if ray.is_degenerate() {
        return MarchTrace {
            rgb: bg,
            final_transmittance: 1.0,
            weight_sum: 0.0,
        };
    }
    let n = cfg.samples_per_ray;
    let delta = (ray.t_far - ray.t_near) / n as f64;
    let k_scale = cfg.density_scale * delta;
    let mut offsets = Offsets::new(cfg, ray_seed);
    let mut transmittance = 1.0;
    let mut weight_sum = 0.0;
    let mut rgb = [0.0; 3];
    for k in 0..n {
        let t = ray.t_near + (k as f64 + offsets.next()) * delta;
        let (_, raw) = sample_raw(grid, ray, t);
        let sigma = activate(raw[0]);
        if sigma > 0.0 {
            let alpha = 1.0 - (-sigma * k_scale).exp();
            let w = transmittance * alpha;
            for c in 0..3 {
                rgb[c] += w * activate(raw[c + 1]);
            }
            weight_sum += w;
            transmittance *= 1.0 - alpha;
            if transmittance < cfg.min_transmittance {
                break;
            }
        }
    }
    for c in 0..3 {
        rgb[c] += transmittance * bg[c];
    }
    MarchTrace {
        rgb,
        final_transmittance: transmittance,
        weight_sum,
    }
}

struct Record {
    stencil: Option<Stencil>,
    raw: [f64; CHANNELS],
    /// `exp(-σ · scale · δ)`
    survive: f64,
    /// Transmittance in front of this sample.
    t_before: f64,
}

/// Vector-Jacobian product of one ray: marches forward, calls `upstream`
/// with the rendered color to obtain `∂L/∂rgb`, and accumulates `∂L/∂raw`
/// into `grad` (same layout as `grid.data()`). Returns the rendered color.
pub fn march_ray_vjp(
    grid: &FeatureGrid,
    ray: &Ray,
    cfg: &RenderConfig,
    ray_seed: u64,
    upstream: impl FnOnce([f64; 3]) -> [f64; 3],
    grad: &mut [f64],
) -> [f64; 3] {
    let bg = cfg.background_rgb;
    if ray.is_degenerate() {
        upstream(bg);
        return bg;
    }
    let n = cfg.samples_per_ray;
    let delta = (ray.t_far - ray.t_near) / n as f64;
    let k_scale = cfg.density_scale * delta;
    let mut offsets = Offsets::new(cfg, ray_seed);
    let mut records: Vec<Record> = Vec::with_capacity(n);
    let mut transmittance = 1.0;
    let mut rgb = [0.0; 3];
    for k in 0..n {
        let t = ray.t_near + (k as f64 + offsets.next()) * delta;
        let (stencil, raw) = sample_raw(grid, ray, t);
        let sigma = activate(raw[0]);
        let survive = (-sigma * k_scale).exp();
        let w = transmittance * (1.0 - survive);
        for c in 0..3 {
            rgb[c] += w * activate(raw[c + 1]);
        }
        records.push(Record {
            stencil,
            raw,
            survive,
            t_before: transmittance,
        });
        transmittance *= survive;
        if sigma > 0.0 && transmittance < cfg.min_transmittance {
            break;
        }
    }
    for c in 0..3 {
        rgb[c] += transmittance * bg[c];
    }

    let d_rgb = upstream(rgb);
    let plane = grid.node_count();
    // suffix = Σ_{j>k} w_j c_j + T_N · bg, projected on d_rgb
    let mut suffix = transmittance * (0..3).map(|c| bg[c] * d_rgb[c]).sum::<f64>();
    for rec in records.iter().rev() {
        let t_after = rec.t_before * rec.survive;
        let w = rec.t_before - t_after;
        let color = [activate(rec.raw[1]), activate(rec.raw[2]), activate(rec.raw[3])];
        let c_dot = (0..3).map(|c| color[c] * d_rgb[c]).sum::<f64>();
        if let Some(s) = &rec.stencil {
            let mut d_raw = [0f64; CHANNELS];
            d_raw[0] = k_scale * (t_after * c_dot - suffix) * activate_grad(rec.raw[0]);
            for c in 0..3 {
                d_raw[c + 1] = w * d_rgb[c] * activate_grad(rec.raw[c + 1]);
            }
            for (ch, d) in d_raw.iter().enumerate() {
                if *d != 0.0 {
                    let g = &mut grad[ch * plane..(ch + 1) * plane];
                    for (&node, &wt) in s.nodes.iter().zip(&s.weights) {
                        g[node] += wt * d;
                    }
                }
            }
        }
        suffix += w * c_dot;
    }
    rgb
}

/// Squared-error loss `Σ_rays |rgb - target|²` and its exact gradient with
/// respect to the raw grid values. Ray `i` uses jitter stream `i`.
pub fn grad_march(
    grid: &FeatureGrid,
    rays: &[Ray],
    cfg: &RenderConfig,
    targets: &[[f64; 3]],
) -> Result<(f64, Vec<f64>)> {
    if rays.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rays but {} targets",
            rays.len(),
            targets.len()
        )));
    }
    let mut grad = vec![0f64; grid.data().len()];
    let mut loss = 0.0;
    for (i, (ray, target)) in rays.iter().zip(targets).enumerate() {
        march_ray_vjp(
            grid,
            ray,
            cfg,
            i as u64,
            |rgb| {
                let mut d = [0.0; 3];
                for c in 0..3 {
                    let e = rgb[c] - target[c];
                    loss += e * e;
                    d[c] = 2.0 * e;
                }
                d
            },
            &mut grad,
        );
    }
    Ok((loss, grad))
}
