use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Cache, Conv, Layer, Sequential, Upsample2};
use crate::relu_field::{Aabb, FeatureGrid, CHANNELS};
use crate::seed::{mix, Rng};
use crate::tensor::Tensor;

/// Smallest admissible noise extent per axis.
pub const MIN_NOISE_EXTENT: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Noise channels per location.
    pub n_z: usize,
    /// `[x, y, z]` extent of the stage-0 noise grid used in training.
    pub noise_extent: [usize; 3],
    pub width: usize,
    /// Layers per stage counting the stage-0 transposed convolution.
    pub conv_layers: usize,
    pub slope: f32,
    /// Init gain of the last layer of residual stages.
    pub residual_gain: f32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_z: 4,
            noise_extent: [8; 3],
            width: 32,
            conv_layers: 5,
            slope: 0.2,
            residual_gain: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_z == 0 || self.width == 0 {
            return Err(Error::InvalidArgument("n_z and width must be positive".into()));
        }
        if self.conv_layers < 2 {
            return Err(Error::InvalidArgument("a stage needs at least 2 layers".into()));
        }
        check_extent(self.noise_extent)
    }

    /// `[x, y, z]` output dims of `stage` for the training noise extent.
    pub fn stage_dims(&self, stage: usize) -> [usize; 3] {
        self.noise_extent.map(|n| n << (stage + 1))
    }
}

fn check_extent(extent: [usize; 3]) -> Result<()> {
    if extent.iter().any(|&n| n < MIN_NOISE_EXTENT) {
        return Err(Error::InvalidArgument(format!(
            "noise extent {extent:?} is below the minimum of {MIN_NOISE_EXTENT} per axis"
        )));
    }
    Ok(())
}

/// Spatial grid of i.i.d. standard-normal noise vectors, `[n_z, z, y, x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseGrid {
    pub values: Tensor,
}

impl NoiseGrid {
    pub fn sample(extent: [usize; 3], n_z: usize, rng: &mut Rng) -> Result<Self> {
        check_extent(extent)?;
        Ok(NoiseGrid {
            values: normal_tensor([n_z, extent[2], extent[1], extent[0]], rng),
        })
    }

    /// `[x, y, z]`
    pub fn extent(&self) -> [usize; 3] {
        let [d, h, w] = self.values.spatial();
        [w, h, d]
    }

    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.values.to_le_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    /// Noise injected at residual stage `stage`, a deterministic function of
    /// this grid and the stage index.
    pub fn stage_noise(&self, stage: usize, spatial: [usize; 3]) -> Tensor {
        let mut rng = Rng::seed_from_u64(mix(self.fingerprint(), stage as u64));
        let [d, h, w] = spatial;
        normal_tensor([self.values.channels(), d, h, w], &mut rng)
    }
}

fn normal_tensor(shape: [usize; 4], rng: &mut Rng) -> Tensor {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub net: Sequential,
    pub frozen: bool,
}

impl Stage {
    pub fn hash(&self) -> String {
        self.net.param_hash()
    }
}

/// Progressive generator. Stage 0 decodes the noise grid through a 2x
/// transposed convolution; stage `k > 0` sees `tanh` of the upsampled
/// previous pre-activation together with stage noise and adds a residual to
/// that pre-activation. Every stage output is `tanh` of its pre-activation.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorStack {
    pub config: GeneratorConfig,
    pub aabb: Aabb,
    pub stages: Vec<Stage>,
    /// The reconstruction seed.
    pub z_star: NoiseGrid,
}

/// Intermediate values of the last stage kept for back-propagation.
pub struct StageTrace {
    pub cache: Cache,
    /// Output `tanh(s)` of the traced stage.
    pub output: Tensor,
}

impl GeneratorStack {
    /// A stack without stages; `z*` is drawn from `rng`.
    pub fn new(config: GeneratorConfig, aabb: Aabb, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let z_star = NoiseGrid::sample(config.noise_extent, config.n_z, rng)?;
        Ok(GeneratorStack {
            config,
            aabb,
            stages: Vec::new(),
            z_star,
        })
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn sample_noise(&self, rng: &mut Rng) -> Result<NoiseGrid> {
        NoiseGrid::sample(self.config.noise_extent, self.config.n_z, rng)
    }

    /// Freezes all existing stages and appends a freshly initialized one.
    pub fn push_stage(&mut self, rng: &mut Rng) -> usize {
        for s in &mut self.stages {
            s.frozen = true;
        }
        let net = stage_net(&self.config, self.stages.is_empty(), rng);
        self.stages.push(Stage { net, frozen: false });
        self.stages.len() - 1
    }

    pub fn freeze_all(&mut self) {
        for s in &mut self.stages {
            s.frozen = true;
        }
    }

    /// SHA-256 over every stage hash and `z*`.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.stages {
            h.update(s.net.param_bytes());
        }
        h.update(self.z_star.values.to_le_bytes());
        hex::encode(h.finalize())
    }

    fn check_stage(&self, up_to_stage: usize) -> Result<()> {
        if up_to_stage >= self.stages.len() {
            return Err(Error::OutOfBounds(format!(
                "stage {up_to_stage} requested but only {} stages are built",
                self.stages.len()
            )));
        }
        Ok(())
    }

    /// Raw output of stages `0..=up_to_stage` as a `[4, z, y, x]` tensor.
    pub fn generate_tensor(&self, z: &NoiseGrid, up_to_stage: usize) -> Result<Tensor> {
        Ok(self.forward(z, up_to_stage, false)?.0)
    }

    /// Output of stages `0..=up_to_stage` with the cache of the last one.
    pub fn forward_traced(&self, z: &NoiseGrid, stage: usize) -> Result<StageTrace> {
        let (output, cache) = self.forward(z, stage, true)?;
        Ok(StageTrace {
            cache: cache.expect("requested"),
            output,
        })
    }

    fn forward(&self, z: &NoiseGrid, up_to_stage: usize, trace: bool) -> Result<(Tensor, Option<Cache>)> {
        self.check_stage(up_to_stage)?;
        check_extent(z.extent())?;
        if z.values.channels() != self.config.n_z {
            return Err(Error::ShapeMismatch(format!(
                "noise has {} channels, generator expects {}",
                z.values.channels(),
                self.config.n_z
            )));
        }
        let mut pre: Option<Tensor> = None;
        let mut cache = None;
        for (k, stage) in self.stages[..=up_to_stage].iter().enumerate() {
            let keep = trace && k == up_to_stage;
            let (input, base) = match pre.take() {
                None => (z.values.clone(), None),
                Some(prev) => {
                    let base = upsample_tensor(&prev)?;
                    let noise = z.stage_noise(k, base.spatial());
                    (base.map(f32::tanh).concat_channels(&noise)?, Some(base))
                }
            };
            let mut s = if keep {
                let c = stage.net.forward_cached(&input);
                let out = c.output().clone();
                cache = Some(c);
                out
            } else {
                stage.net.forward(&input)
            };
            if let Some(base) = base {
                s.add_assign(&base)?;
            }
            pre = Some(s);
        }
        let out = pre.expect("at least one stage").map(f32::tanh);
        Ok((out, cache))
    }

    /// The AABB of an output grid with `dims` nodes: the training AABB when
    /// `dims` are the training dims, otherwise scaled to keep the cell size.
    pub fn output_aabb(&self, dims: [usize; 3], stage: usize) -> Aabb {
        let train = self.config.stage_dims(stage);
        if dims == train {
            return self.aabb;
        }
        let c = self.aabb.center();
        let e = self.aabb.extent();
        let half = [0, 1, 2].map(|a| 0.5 * e[a] * (dims[a] - 1) as f64 / (train[a] - 1) as f64);
        Aabb {
            min: [0, 1, 2].map(|a| c[a] - half[a]),
            max: [0, 1, 2].map(|a| c[a] + half[a]),
        }
    }

    pub fn to_grid(&self, raw: Tensor, stage: usize) -> Result<FeatureGrid> {
        let [d, h, w] = raw.spatial();
        let aabb = self.output_aabb([w, h, d], stage);
        FeatureGrid::from_tensor(raw, aabb)
    }
}

/// Runs stages `0..=up_to_stage` on `z`.
pub fn generate(stack: &GeneratorStack, z: &NoiseGrid, up_to_stage: usize) -> Result<FeatureGrid> {
    let raw = stack.generate_tensor(z, up_to_stage)?;
    stack.to_grid(raw, up_to_stage)
}

/// Samples noise of a new `[x, y, z]` extent and runs the full stack.
pub fn retarget(stack: &GeneratorStack, extent: [usize; 3], rng: &mut Rng) -> Result<FeatureGrid> {
    if stack.is_empty() {
        return Err(Error::InvalidArgument("cannot sample from a stack without stages".into()));
    }
    let z = NoiseGrid::sample(extent, stack.config.n_z, rng)?;
    generate(stack, &z, stack.len() - 1)
}

fn upsample_tensor(t: &Tensor) -> Result<Tensor> {
    Ok(FeatureGrid::from_tensor(t.clone(), Aabb::unit())?.upsample2x().into_values())
}

fn stage_net(cfg: &GeneratorConfig, first: bool, rng: &mut Rng) -> Sequential {
    let w = cfg.width;
    let mut layers = Vec::new();
    if first {
        layers.push(Layer::Upsample2(Upsample2::new(cfg.n_z, w, 1.0, rng)));
    } else {
        layers.push(Layer::Conv(Conv::new(CHANNELS + cfg.n_z, w, [3; 3], 1.0, rng)));
    }
    layers.push(Layer::LeakyRelu(cfg.slope));
    for _ in 0..cfg.conv_layers - 2 {
        layers.push(Layer::Conv(Conv::new(w, w, [3; 3], 1.0, rng)));
        layers.push(Layer::LeakyRelu(cfg.slope));
    }
    let gain = if first { 1.0 } else { cfg.residual_gain };
    layers.push(Layer::Conv(Conv::new(w, CHANNELS, [3; 3], gain, rng)));
    Sequential::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn small_config() -> GeneratorConfig {
        GeneratorConfig {
            noise_extent: [2; 3],
            width: 6,
            ..Default::default()
        }
    }

    fn stack(stages: usize) -> GeneratorStack {
        let mut rng = rng_from_seed(1);
        let mut s = GeneratorStack::new(small_config(), Aabb::unit(), &mut rng).unwrap();
        for _ in 0..stages {
            s.push_stage(&mut rng);
        }
        s
    }

    #[test]
    fn output_dims_double_per_stage_and_stay_in_range() {
        let s = stack(3);
        for k in 0..3 {
            let g = generate(&s, &s.z_star, k).unwrap();
            assert_eq!(g.dims(), [4 << k; 3]);
            assert_eq!(*g.aabb(), Aabb::unit());
            assert!(g.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert!(generate(&s, &s.z_star, 3).is_err());
    }

    #[test]
    fn same_noise_is_bit_identical() {
        let s = stack(2);
        let z = s.sample_noise(&mut rng_from_seed(4)).unwrap();
        assert_eq!(generate(&s, &z, 1).unwrap(), generate(&s, &z, 1).unwrap());
    }

    #[test]
    fn stage_noise_depends_on_z_and_stage() {
        let mut rng = rng_from_seed(2);
        let a = NoiseGrid::sample([2; 3], 4, &mut rng).unwrap();
        let b = NoiseGrid::sample([2; 3], 4, &mut rng).unwrap();
        assert_eq!(a.stage_noise(1, [4; 3]), a.stage_noise(1, [4; 3]));
        assert_ne!(a.stage_noise(1, [4; 3]), a.stage_noise(2, [4; 3]));
        assert_ne!(a.stage_noise(1, [4; 3]), b.stage_noise(1, [4; 3]));
    }

    #[test]
    fn retarget_scales_each_axis() {
        let s = stack(3);
        let mut rng = rng_from_seed(3);
        let g = retarget(&s, [4, 2, 2], &mut rng).unwrap();
        assert_eq!(g.dims(), [32, 16, 16]);
        let g = retarget(&s, [2, 4, 3], &mut rng).unwrap();
        assert_eq!(g.dims(), [16, 32, 24]);
        assert!(retarget(&s, [1, 2, 2], &mut rng).is_err());
    }

    #[test]
    fn retargeted_aabb_keeps_cell_size() {
        let s = stack(2);
        let g = retarget(&s, [4, 2, 2], &mut rng_from_seed(8)).unwrap();
        let train = generate(&s, &s.z_star, 1).unwrap();
        for a in 0..3 {
            assert!((g.cell_size()[a] - train.cell_size()[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn push_stage_freezes_previous() {
        let mut s = stack(1);
        assert!(!s.stages[0].frozen);
        s.push_stage(&mut rng_from_seed(5));
        assert!(s.stages[0].frozen && !s.stages[1].frozen);
    }

    #[test]
    fn traced_forward_matches_plain() {
        let s = stack(2);
        let t = s.forward_traced(&s.z_star, 1).unwrap();
        assert_eq!(t.output, s.generate_tensor(&s.z_star, 1).unwrap());
    }
}
