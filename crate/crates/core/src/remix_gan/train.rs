use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{Adam, AdamConfig, Grads};
use crate::relu_field::{random_corner, FeatureGrid};
use crate::remix_gan::critic::{critic_optimizer, critic_step, Critic, CriticPair};
use crate::remix_gan::generator::{GeneratorConfig, GeneratorStack, NoiseGrid, StageTrace};
use crate::renderer::{render_patch_2d, render_patch_vjp, sample_pose, PoseModel, RenderConfig};
use crate::Camera;
use crate::seed::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub gamma2d: f64,
    pub gamma3d: f64,
    pub rho2d: f64,
    pub rho3d: f64,
    pub gp_lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma2d: 1.0,
            gamma3d: 1.0,
            rho2d: 10.0,
            rho3d: 10.0,
            gp_lambda: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma2d, self.gamma3d, self.rho2d, self.rho3d, self.gp_lambda];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub stages: usize,
    /// Generator updates per stage.
    pub iterations: usize,
    /// Per-stage override of `iterations`; stages past its end use `iterations`.
    pub stage_iterations: Vec<usize>,
    /// Critic updates per generator update.
    pub n_critic: usize,
    pub lr_critic: f64,
    pub lr_generator: f64,
    pub adam_betas: [f64; 2],
    /// Side of square 2D patches, capped by the image size.
    pub patch_2d: usize,
    /// Side of cubic 3D patches, capped by the stage grid.
    pub patch_3d: usize,
    pub critic_width: usize,
    pub critic_layers: usize,
    pub samples_per_ray: usize,
    pub log_every: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            stages: 4,
            iterations: 20_000,
            stage_iterations: Vec::new(),
            n_critic: 3,
            lr_critic: 5e-4,
            lr_generator: 5e-4,
            adam_betas: [0.5, 0.9],
            patch_2d: 48,
            patch_3d: 12,
            critic_width: 32,
            critic_layers: 4,
            samples_per_ray: 128,
            log_every: 50,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.n_critic == 0 {
            return Err(Error::InvalidArgument("stages and n_critic must be positive".into()));
        }
        if self.patch_2d == 0 || self.patch_3d == 0 || self.critic_width == 0 || self.critic_layers < 2 {
            return Err(Error::InvalidArgument("patch sizes and critic shape must be positive".into()));
        }
        if !(self.lr_critic > 0.0 && self.lr_generator > 0.0) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        if self.samples_per_ray < 2 {
            return Err(Error::InvalidArgument("samples_per_ray must be at least 2".into()));
        }
        Ok(())
    }

    pub fn iterations_for(&self, stage: usize) -> usize {
        self.stage_iterations.get(stage).copied().unwrap_or(self.iterations)
    }

    fn render_config(&self, grid: &FeatureGrid, rng: &mut Rng) -> RenderConfig {
        RenderConfig {
            samples_per_ray: self.samples_per_ray,
            seed: rng.random(),
            ..RenderConfig::training(grid.aabb())
        }
    }

    fn patch_3d_size(&self, dims: [usize; 3]) -> [usize; 3] {
        dims.map(|n| n.min(self.patch_3d))
    }
}

/// Per-stage references: `reference` clamped to `[-1, 1]` and average-pooled
/// down to every stage resolution, coarsest first.
pub fn reference_pyramid(reference: &FeatureGrid, cfg: &GeneratorConfig, stages: usize) -> Result<Vec<FeatureGrid>> {
    let finest = cfg.stage_dims(stages - 1);
    let mut grid = reference.clamped_to_unit_range();
    while grid.dims() != finest {
        if grid.dims().iter().zip(&finest).any(|(&a, &b)| a < 2 * b) {
            return Err(Error::ShapeMismatch(format!(
                "reference dims {:?} cannot be pooled to the finest stage dims {finest:?}",
                reference.dims()
            )));
        }
        grid = grid.avg_pool2x()?;
    }
    let mut out = vec![grid];
    for _ in 1..stages {
        let next = out.last().unwrap().avg_pool2x()?;
        out.push(next);
    }
    out.reverse();
    Ok(out)
}

/// The four unweighted terms of the generator objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTerms {
    pub adv2d: f64,
    pub adv3d: f64,
    pub rec2d: f64,
    pub rec3d: f64,
}

impl GeneratorTerms {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.gamma2d * self.adv2d + w.gamma3d * self.adv3d + w.rho2d * self.rec2d + w.rho3d * self.rec3d
    }

    fn is_finite(&self) -> bool {
        [self.adv2d, self.adv3d, self.rec2d, self.rec3d].iter().all(|v| v.is_finite())
    }
}

struct Window {
    camera: Camera,
    corner: [usize; 2],
    size: [usize; 2],
    render: RenderConfig,
}

fn sample_window(pose: &PoseModel, stage: usize, cfg: &GanConfig, grid: &FeatureGrid, rng: &mut Rng) -> Result<Window> {
    let camera = sample_pose(pose, stage, rng)?;
    let (w, h) = (camera.width as usize, camera.height as usize);
    let side = cfg.patch_2d.min(w).min(h);
    let corner = [rng.random_range(0..=w - side), rng.random_range(0..=h - side)];
    let render = cfg.render_config(grid, rng);
    Ok(Window {
        camera,
        corner,
        size: [side, side],
        render,
    })
}

fn render_window(grid: &FeatureGrid, win: &Window) -> Result<Image> {
    render_patch_2d(grid, &win.camera, &win.render, win.corner, win.size)
}

/// Back-propagates `∂L/∂out` of the traced stage into its parameters.
fn backprop_stage(stack: &GeneratorStack, stage: usize, trace: &StageTrace, d_out: Tensor, grads: &mut Grads) {
    let mut ds = d_out;
    ds.data_mut()
        .iter_mut()
        .zip(trace.output.data())
        .for_each(|(d, &y)| *d *= 1.0 - y * y);
    stack.stages[stage].net.backward(&trace.cache, ds, grads, false);
}

fn add_render_grad(grid: &FeatureGrid, win: &Window, d_patch: &Image, d_out: &mut Tensor) -> Result<()> {
    let mut buf = vec![0f64; grid.data().len()];
    render_patch_vjp(grid, &win.camera, &win.render, win.corner, d_patch, &mut buf)?;
    d_out.data_mut().iter_mut().zip(&buf).for_each(|(d, &g)| *d += g as f32);
    Ok(())
}

/// Evaluates the generator objective at `stage` on fresh noise, poses and
/// patches drawn from `rng`, and optionally accumulates its gradient with
/// respect to the stage parameters. The draws do not depend on the weights.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective(
    stack: &GeneratorStack,
    reference: &FeatureGrid,
    critics: &CriticPair,
    weights: &LossWeights,
    pose_model: &PoseModel,
    cfg: &GanConfig,
    stage: usize,
    rng: &mut Rng,
    grads: Option<&mut Grads>,
) -> Result<GeneratorTerms> {
    let dims = stack.config.stage_dims(stage);
    if reference.dims() != dims {
        return Err(Error::ShapeMismatch(format!(
            "reference dims {:?} do not match stage {stage} output dims {dims:?}",
            reference.dims()
        )));
    }
    // adversarial terms on a random sample
    let z = stack.sample_noise(rng)?;
    let fake = stack.forward_traced(&z, stage)?;
    let fake_grid = FeatureGrid::from_tensor(fake.output.clone(), stack.aabb)?;
    let win = sample_window(pose_model, stage, cfg, &fake_grid, rng)?;
    let fake2d = render_window(&fake_grid, &win)?.to_tensor();
    let p3 = cfg.patch_3d_size(dims);
    let c3 = random_corner(dims, p3, rng)?;
    let fake3d = fake_grid.extract_patch_3d(c3, p3)?;

    // reconstruction terms on z*
    let star = stack.forward_traced(&stack.z_star, stage)?;
    let star_grid = FeatureGrid::from_tensor(star.output.clone(), stack.aabb)?;
    let rwin = sample_window(pose_model, stage, cfg, reference, rng)?;
    let real2d = render_window(reference, &rwin)?;
    let star2d = render_window(&star_grid, &rwin)?;

    let terms = GeneratorTerms {
        adv2d: -critics.critic2d.score(&fake2d),
        adv3d: -critics.critic3d.score(&fake3d),
        rec2d: star2d.mse(&real2d)?,
        rec3d: star.output.mse(reference.values())?,
    };
    let Some(grads) = grads else {
        return Ok(terms);
    };

    let mut d_fake = Tensor::zeros(fake.output.shape());
    if weights.gamma3d != 0.0 {
        let g = critics.critic3d.input_grad(&fake3d).map(|v| -(weights.gamma3d as f32) * v);
        d_fake.add_crop([c3[2], c3[1], c3[0]], &g)?;
    }
    if weights.gamma2d != 0.0 {
        let g = critics.critic2d.input_grad(&fake2d).map(|v| -(weights.gamma2d as f32) * v);
        add_render_grad(&fake_grid, &win, &Image::from_tensor(&g)?, &mut d_fake)?;
    }
    backprop_stage(stack, stage, &fake, d_fake, grads);

    let n3 = star.output.len() as f32;
    let k3 = 2.0 * weights.rho3d as f32 / n3;
    let mut d_star = Tensor::from_vec(
        star.output.shape(),
        star.output
            .data()
            .iter()
            .zip(reference.data())
            .map(|(&a, &b)| k3 * (a - b))
            .collect(),
    )?;
    if weights.rho2d != 0.0 {
        let k2 = 2.0 * weights.rho2d as f32 / star2d.data().len() as f32;
        let d = Image::from_vec(
            star2d.width(),
            star2d.height(),
            star2d.data().iter().zip(real2d.data()).map(|(&a, &b)| k2 * (a - b)).collect(),
        )?;
        add_render_grad(&star_grid, &rwin, &d, &mut d_star)?;
    }
    backprop_stage(stack, stage, &star, d_star, grads);
    Ok(terms)
}

/// Weighted generator objective at `stage`.
#[allow(clippy::too_many_arguments)]
pub fn total_generator_loss(
    stack: &GeneratorStack,
    reference: &FeatureGrid,
    critics: &CriticPair,
    weights: &LossWeights,
    pose_model: &PoseModel,
    cfg: &GanConfig,
    stage: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let terms = generator_objective(stack, reference, critics, weights, pose_model, cfg, stage, rng, None)?;
    Ok(terms.total(weights))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanLogRecord {
    pub stage: usize,
    pub iteration: usize,
    pub critic2d: f64,
    pub critic3d: f64,
    pub terms: GeneratorTerms,
    pub total: f64,
}

fn abort(stage: usize, iteration: usize, what: &str) -> Error {
    Error::NumericalAbort(format!("{what} is not finite at stage {stage}, iteration {iteration}"))
}

/// Trains the newest stage of `stack` against the stage reference, touching
/// only that stage's parameters and `critics`.
#[allow(clippy::too_many_arguments)]
pub fn train_stage(
    stack: &mut GeneratorStack,
    critics: &mut CriticPair,
    reference: &FeatureGrid,
    pose_model: &PoseModel,
    cfg: &GanConfig,
    weights: &LossWeights,
    stage: usize,
    rng: &mut Rng,
    mut on_record: impl FnMut(&GanLogRecord),
) -> Result<Vec<GanLogRecord>> {
    cfg.validate()?;
    weights.validate()?;
    if stage + 1 != stack.len() {
        return Err(Error::InvalidArgument(format!(
            "stage {stage} is not the newest of {} stages",
            stack.len()
        )));
    }
    if stack.stages[..stage].iter().any(|s| !s.frozen) || stack.stages[stage].frozen {
        return Err(Error::InvalidArgument(
            "earlier stages must be frozen and the trained stage unfrozen".into(),
        ));
    }
    if pose_model.stages() <= stage {
        return Err(Error::InvalidArgument(format!(
            "pose model has {} stages, need {}",
            pose_model.stages(),
            stage + 1
        )));
    }
    let dims = stack.config.stage_dims(stage);
    if reference.dims() != dims {
        return Err(Error::ShapeMismatch(format!(
            "reference dims {:?} do not match stage dims {dims:?}",
            reference.dims()
        )));
    }
    let [b1, b2] = cfg.adam_betas;
    let mut adam_gen = {
        let net = &stack.stages[stage].net;
        Adam::new(AdamConfig::new(cfg.lr_generator, b1, b2), net.params().iter().map(|p| p.len()))
    };
    let critic_cfg = AdamConfig::new(cfg.lr_critic, b1, b2);
    let mut adam2d = critic_optimizer(&critics.critic2d, critic_cfg);
    let mut adam3d = critic_optimizer(&critics.critic3d, critic_cfg);
    let p3 = cfg.patch_3d_size(dims);
    let mut log = Vec::new();

    let iterations = cfg.iterations_for(stage);
    for it in 0..iterations {
        let z = stack.sample_noise(rng)?;
        let fake_grid = FeatureGrid::from_tensor(stack.generate_tensor(&z, stage)?, stack.aabb)?;
        let (mut loss2d, mut loss3d) = (0.0, 0.0);
        for _ in 0..cfg.n_critic {
            if weights.gamma2d != 0.0 {
                let fwin = sample_window(pose_model, stage, cfg, &fake_grid, rng)?;
                let fake = render_window(&fake_grid, &fwin)?.to_tensor();
                let rwin = sample_window(pose_model, stage, cfg, reference, rng)?;
                let real = render_window(reference, &rwin)?.to_tensor();
                loss2d = critic_step(&mut critics.critic2d, &mut adam2d, &[real], &[fake], weights.gp_lambda, rng)
                    .map_err(|_| abort(stage, it, "2D critic gradient"))?;
            }
            if weights.gamma3d != 0.0 {
                let (_, fake) = fake_grid.random_patch_3d(p3, rng)?;
                let (_, real) = reference.random_patch_3d(p3, rng)?;
                loss3d = critic_step(&mut critics.critic3d, &mut adam3d, &[real], &[fake], weights.gp_lambda, rng)
                    .map_err(|_| abort(stage, it, "3D critic gradient"))?;
            }
        }
        if !loss2d.is_finite() || !loss3d.is_finite() {
            return Err(abort(stage, it, "critic loss"));
        }

        let mut grads = stack.stages[stage].net.zero_grads();
        let terms = generator_objective(
            stack,
            reference,
            critics,
            weights,
            pose_model,
            cfg,
            stage,
            rng,
            Some(&mut grads),
        )?;
        if !terms.is_finite() {
            return Err(abort(stage, it, "generator loss"));
        }
        if !grads.is_finite() {
            return Err(abort(stage, it, "generator gradient"));
        }
        adam_gen.step(&mut stack.stages[stage].net.params_mut(), &grads.0);

        if it % cfg.log_every.max(1) == 0 || it + 1 == iterations {
            let rec = GanLogRecord {
                stage,
                iteration: it,
                critic2d: loss2d,
                critic3d: loss3d,
                terms,
                total: terms.total(weights),
            };
            on_record(&rec);
            log.push(rec);
        }
    }
    Ok(log)
}

/// Grows `stack` to `cfg.stages` stages, training each new stage with fresh
/// critics. Stages already present are kept frozen. `on_stage` runs after
/// every trained stage (e.g. to write a checkpoint).
#[allow(clippy::too_many_arguments)]
pub fn train_progressive(
    stack: &mut GeneratorStack,
    reference: &FeatureGrid,
    pose_model: &PoseModel,
    cfg: &GanConfig,
    weights: &LossWeights,
    rng: &mut Rng,
    mut on_record: impl FnMut(&GanLogRecord),
    mut on_stage: impl FnMut(&GeneratorStack) -> Result<()>,
) -> Result<Vec<GanLogRecord>> {
    cfg.validate()?;
    let pyramid = reference_pyramid(reference, &stack.config, cfg.stages)?;
    let mut log = Vec::new();
    stack.freeze_all();
    while stack.len() < cfg.stages {
        let stage = stack.push_stage(rng);
        let mut critics = CriticPair::new(cfg.critic_width, cfg.critic_layers, rng);
        let records = train_stage(
            stack,
            &mut critics,
            &pyramid[stage],
            pose_model,
            cfg,
            weights,
            stage,
            rng,
            &mut on_record,
        )?;
        log.extend(records);
        stack.stages[stage].frozen = true;
        on_stage(stack)?;
    }
    Ok(log)
}

/// Draws `count` noise grids of the training extent.
pub fn sample_noises(stack: &GeneratorStack, count: usize, rng: &mut Rng) -> Result<Vec<NoiseGrid>> {
    (0..count).map(|_| stack.sample_noise(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relu_field::Aabb;
    use crate::remix_gan::critic::PatchCritic;
    use crate::seed::rng_from_seed;

    fn setup() -> (GeneratorStack, CriticPair, PoseModel, GanConfig) {
        let mut rng = rng_from_seed(1);
        let gcfg = GeneratorConfig {
            noise_extent: [2; 3],
            width: 6,
            ..Default::default()
        };
        let mut stack = GeneratorStack::new(gcfg, Aabb::unit(), &mut rng).unwrap();
        stack.push_stage(&mut rng);
        let critics = CriticPair::new(4, 3, &mut rng);
        let pose = PoseModel::for_aabb(&Aabb::unit(), 17.6, 2, 16, 16).unwrap();
        let cfg = GanConfig {
            stages: 2,
            iterations: 3,
            patch_2d: 8,
            patch_3d: 3,
            samples_per_ray: 16,
            ..Default::default()
        };
        (stack, critics, pose, cfg)
    }

    fn constant_critic(c: f32, in_ch: usize, kernel: [usize; 3]) -> PatchCritic {
        let mut p = PatchCritic::new(in_ch, 3, 2, kernel, &mut rng_from_seed(0));
        for buf in p.net.params_mut() {
            buf.iter_mut().for_each(|v| *v = 0.0);
        }
        **p.net.params_mut().last_mut().unwrap() = vec![c];
        p
    }

    #[test]
    fn zero_weights_give_zero() {
        let (stack, critics, pose, cfg) = setup();
        let reference = generate_ref(&stack);
        let w = LossWeights {
            gamma2d: 0.0,
            gamma3d: 0.0,
            rho2d: 0.0,
            rho3d: 0.0,
            gp_lambda: 10.0,
        };
        let l = total_generator_loss(&stack, &reference, &critics, &w, &pose, &cfg, 0, &mut rng_from_seed(2)).unwrap();
        assert_eq!(l, 0.0);
    }

    fn generate_ref(stack: &GeneratorStack) -> FeatureGrid {
        crate::remix_gan::generate(stack, &stack.z_star, 0).unwrap()
    }

    #[test]
    fn perfect_reconstruction_with_constant_critics() {
        let (stack, _, pose, cfg) = setup();
        let reference = generate_ref(&stack);
        let critics = CriticPair {
            critic2d: constant_critic(0.7, 3, [1, 3, 3]),
            critic3d: constant_critic(0.7, 4, [3, 3, 3]),
        };
        let w = LossWeights::default();
        let terms =
            generator_objective(&stack, &reference, &critics, &w, &pose, &cfg, 0, &mut rng_from_seed(3), None).unwrap();
        assert_eq!(terms.rec2d, 0.0);
        assert_eq!(terms.rec3d, 0.0);
        assert!((terms.total(&w) + 2.0 * 0.7).abs() < 1e-6);
    }

    #[test]
    fn shifted_reference_gives_rho3d_hundredth() {
        let (stack, critics, pose, cfg) = setup();
        let mut reference = generate_ref(&stack);
        reference.data_mut().iter_mut().for_each(|v| *v -= 0.1);
        let w = LossWeights {
            gamma2d: 0.0,
            gamma3d: 0.0,
            rho2d: 0.0,
            rho3d: 10.0,
            gp_lambda: 10.0,
        };
        let l = total_generator_loss(&stack, &reference, &critics, &w, &pose, &cfg, 0, &mut rng_from_seed(4)).unwrap();
        assert!((l - 10.0 * 0.01).abs() < 1e-6, "{l}");
    }

    #[test]
    fn loss_is_linear_in_each_weight() {
        let (stack, critics, pose, cfg) = setup();
        let mut reference = generate_ref(&stack);
        reference.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (*v + 0.3 * ((i % 7) as f32 - 3.0) / 3.0).clamp(-1.0, 1.0));
        let zero = LossWeights {
            gamma2d: 0.0,
            gamma3d: 0.0,
            rho2d: 0.0,
            rho3d: 0.0,
            gp_lambda: 10.0,
        };
        let iso = generator_objective(&stack, &reference, &critics, &zero, &pose, &cfg, 0, &mut rng_from_seed(5), None).unwrap();
        let cases: [(LossWeights, f64); 4] = [
            (LossWeights { gamma2d: 2.5, ..zero.clone() }, 2.5 * iso.adv2d),
            (LossWeights { gamma3d: 2.5, ..zero.clone() }, 2.5 * iso.adv3d),
            (LossWeights { rho2d: 2.5, ..zero.clone() }, 2.5 * iso.rec2d),
            (LossWeights { rho3d: 2.5, ..zero.clone() }, 2.5 * iso.rec3d),
        ];
        for (w, expected) in cases {
            let l = total_generator_loss(&stack, &reference, &critics, &w, &pose, &cfg, 0, &mut rng_from_seed(5)).unwrap();
            assert!((l - expected).abs() < 1e-12 * expected.abs().max(1.0), "{w:?}: {l} vs {expected}");
            assert!(expected != 0.0);
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let (stack, critics, pose, cfg) = setup();
        let mut reference = generate_ref(&stack);
        reference.data_mut().iter_mut().for_each(|v| *v = (*v * 0.5 + 0.2).clamp(-1.0, 1.0));
        let w = LossWeights {
            gamma2d: 1.0,
            gamma3d: 1.0,
            rho2d: 10.0,
            rho3d: 10.0,
            gp_lambda: 10.0,
        };
        let mut grads = stack.stages[0].net.zero_grads();
        generator_objective(&stack, &reference, &critics, &w, &pose, &cfg, 0, &mut rng_from_seed(6), Some(&mut grads)).unwrap();
        let eval = |s: &GeneratorStack| total_generator_loss(s, &reference, &critics, &w, &pose, &cfg, 0, &mut rng_from_seed(6)).unwrap();
        // one-sided differences that disagree flag a leaky-ReLU kink inside
        // the step; those coordinates are skipped
        let base = eval(&stack);
        let eps = 1e-3f32;
        let (mut checked, mut total) = (0, 0);
        for p in 0..grads.0.len() {
            for j in [0usize, 3] {
                if j >= grads.0[p].len() {
                    continue;
                }
                total += 1;
                let mut plus = stack.clone();
                plus.stages[0].net.params_mut()[p][j] += eps;
                let mut minus = stack.clone();
                minus.stages[0].net.params_mut()[p][j] -= eps;
                let (lp, lm) = (eval(&plus), eval(&minus));
                let (fwd, bwd) = ((lp - base) / eps as f64, (base - lm) / eps as f64);
                if (fwd - bwd).abs() > 0.02 * fwd.abs().max(bwd.abs()).max(1e-3) {
                    continue;
                }
                let fd = (lp - lm) / (2.0 * eps as f64);
                let an = grads.0[p][j] as f64;
                assert!((fd - an).abs() < 0.01 * fd.abs().max(1e-2), "param {p}[{j}]: fd {fd} vs {an}");
                checked += 1;
            }
        }
        assert!(checked * 10 >= total * 7, "only {checked} of {total} coordinates were smooth");
    }

    #[test]
    fn train_stage_changes_only_the_current_stage() {
        let (mut stack, mut critics, pose, cfg) = setup();
        let reference0 = generate_ref(&stack);
        let mut rng = rng_from_seed(7);
        train_stage(&mut stack, &mut critics, &reference0, &pose, &cfg, &LossWeights::default(), 0, &mut rng, |_| {})
            .unwrap();
        stack.stages[0].frozen = true;
        let frozen_hash = stack.stages[0].hash();
        stack.push_stage(&mut rng);
        let reference1 = reference0.upsample2x();
        let before1 = stack.stages[1].hash();
        let mut critics1 = CriticPair::new(4, 3, &mut rng);
        let log = train_stage(&mut stack, &mut critics1, &reference1, &pose, &cfg, &LossWeights::default(), 1, &mut rng, |_| {})
            .unwrap();
        assert_eq!(stack.stages[0].hash(), frozen_hash);
        assert_ne!(stack.stages[1].hash(), before1);
        assert_eq!(log.last().unwrap().iteration, 2);
    }

    #[test]
    fn train_stage_preconditions() {
        let (mut stack, mut critics, pose, cfg) = setup();
        let reference = generate_ref(&stack);
        let mut rng = rng_from_seed(8);
        let w = LossWeights::default();
        assert!(train_stage(&mut stack, &mut critics, &reference.upsample2x(), &pose, &cfg, &w, 0, &mut rng, |_| {}).is_err());
        assert!(train_stage(&mut stack, &mut critics, &reference, &pose, &cfg, &w, 1, &mut rng, |_| {}).is_err());
        stack.stages[0].frozen = true;
        assert!(train_stage(&mut stack, &mut critics, &reference, &pose, &cfg, &w, 0, &mut rng, |_| {}).is_err());
    }

    #[test]
    fn nan_reference_aborts_with_location() {
        let (mut stack, mut critics, pose, cfg) = setup();
        let mut reference = generate_ref(&stack);
        reference.data_mut()[5] = f32::NAN;
        let err = train_stage(&mut stack, &mut critics, &reference, &pose, &cfg, &LossWeights::default(), 0, &mut rng_from_seed(9), |_| {})
            .unwrap_err();
        assert!(matches!(err, Error::NumericalAbort(_)), "{err}");
        assert!(err.to_string().contains("stage 0, iteration 0"), "{err}");
    }

    #[test]
    fn pyramid_pools_to_stage_dims() {
        let gcfg = GeneratorConfig {
            noise_extent: [2; 3],
            ..Default::default()
        };
        let v = FeatureGrid::filled([32; 3], Aabb::unit(), [0.5, 2.0, 0.0, 0.0]).unwrap();
        let p = reference_pyramid(&v, &gcfg, 3).unwrap();
        let dims: Vec<usize> = p.iter().map(|g| g.dims()[0]).collect();
        assert_eq!(dims, vec![4, 8, 16]);
        assert!(p.iter().all(|g| g.data().iter().all(|v| (-1.0..=1.0).contains(v))));
        assert!(reference_pyramid(&v, &gcfg, 5).is_err());
    }
}
