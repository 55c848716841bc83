//! Checkpoint directory: `manifest.json` plus one flat little-endian `f32`
//! blob per stage and one for `z*`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Conv, Layer, Sequential, Upsample2};
use crate::relu_field::Aabb;
use crate::remix_gan::generator::{GeneratorConfig, GeneratorStack, NoiseGrid, Stage};
use crate::remix_gan::train::{GanConfig, LossWeights};
use crate::renderer::PoseModel;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "remix3d-ckpt-v1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stack: GeneratorStack,
    pub loss_weights: LossWeights,
    pub train_config: GanConfig,
    pub pose_model: PoseModel,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    aabb: Aabb,
    generator: GeneratorConfig,
    loss_weights: LossWeights,
    train_config: GanConfig,
    pose_model: PoseModel,
    z_star: Blob,
    stages: Vec<StageEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Blob {
    file: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageEntry {
    file: String,
    frozen: bool,
    sha256: String,
    layers: Vec<LayerSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum LayerSpec {
    /// Parameters: weight `[out, in, kd, kh, kw]`, bias `[out]`.
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: [usize; 3],
    },
    /// Parameters: weight `[out, 2, 2, 2, in]`, bias `[out]`.
    Upsample2 { in_ch: usize, out_ch: usize },
    LeakyRelu { slope: f32 },
    Tanh,
}

impl LayerSpec {
    fn of(layer: &Layer) -> Self {
        match layer {
            Layer::Conv(c) => LayerSpec::Conv {
                in_ch: c.in_ch,
                out_ch: c.out_ch,
                kernel: c.kernel,
            },
            Layer::Upsample2(u) => LayerSpec::Upsample2 {
                in_ch: u.in_ch,
                out_ch: u.out_ch,
            },
            Layer::LeakyRelu(s) => LayerSpec::LeakyRelu { slope: *s },
            Layer::Tanh => LayerSpec::Tanh,
        }
    }

    /// Rebuilds the layer, consuming its parameters from `values`.
    fn build(&self, values: &mut impl Iterator<Item = f32>) -> Result<Layer> {
        let mut take = |n: usize| -> Result<Vec<f32>> {
            let v: Vec<f32> = values.take(n).collect();
            if v.len() != n {
                return Err(Error::Checkpoint("stage blob is shorter than its layer list".into()));
            }
            Ok(v)
        };
        Ok(match *self {
            LayerSpec::Conv { in_ch, out_ch, kernel } => {
                if kernel.iter().any(|k| k % 2 == 0) {
                    return Err(Error::Checkpoint(format!("even conv kernel {kernel:?}")));
                }
                Layer::Conv(Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    weight: take(out_ch * in_ch * kernel.iter().product::<usize>())?,
                    bias: take(out_ch)?,
                })
            }
            LayerSpec::Upsample2 { in_ch, out_ch } => Layer::Upsample2(Upsample2 {
                in_ch,
                out_ch,
                weight: take(out_ch * 8 * in_ch)?,
                bias: take(out_ch)?,
            }),
            LayerSpec::LeakyRelu { slope } => Layer::LeakyRelu(slope),
            LayerSpec::Tanh => Layer::Tanh,
        })
    }
}

fn read_f32s(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    f32s(&bytes, path)
}

fn f32s(bytes: &[u8], path: &Path) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Checkpoint(format!("{} is not a whole number of f32 values", path.display())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

pub fn save_checkpoint(
    dir: &Path,
    stack: &GeneratorStack,
    loss_weights: &LossWeights,
    train_config: &GanConfig,
    pose_model: &PoseModel,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(path, e))
    };
    write("z_star.bin", &stack.z_star.values.to_le_bytes())?;
    let mut stages = Vec::new();
    for (k, stage) in stack.stages.iter().enumerate() {
        let file = format!("stage_{k}.bin");
        let bytes = stage.net.param_bytes();
        write(&file, &bytes)?;
        stages.push(StageEntry {
            file,
            frozen: stage.frozen,
            sha256: hex::encode(Sha256::digest(&bytes)),
            layers: stage.net.layers.iter().map(LayerSpec::of).collect(),
        });
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        aabb: stack.aabb,
        generator: stack.config.clone(),
        loss_weights: loss_weights.clone(),
        train_config: train_config.clone(),
        pose_model: pose_model.clone(),
        z_star: Blob {
            file: "z_star.bin".into(),
            shape: stack.z_star.values.shape().to_vec(),
        },
        stages,
    };
    write(MANIFEST_FILE, serde_json::to_string_pretty(&manifest)?.as_bytes())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {:?} (expected {CHECKPOINT_FORMAT})",
            m.format
        )));
    }
    m.generator.validate()?;
    let shape: [usize; 4] = m
        .z_star
        .shape
        .as_slice()
        .try_into()
        .map_err(|_| Error::Checkpoint("z* shape must have 4 entries".into()))?;
    let z_star = NoiseGrid {
        values: Tensor::from_vec(shape, read_f32s(&dir.join(&m.z_star.file))?)
            .map_err(|e| Error::Checkpoint(format!("z*: {e}")))?,
    };
    let mut stages = Vec::new();
    for (k, entry) in m.stages.iter().enumerate() {
        let blob_path = dir.join(&entry.file);
        let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != entry.sha256 {
            return Err(Error::Checkpoint(format!("stage {k} blob hash {digest} does not match manifest")));
        }
        let values = f32s(&bytes, &blob_path)?;
        let total = values.len();
        let mut it = values.into_iter();
        let layers = entry
            .layers
            .iter()
            .map(|spec| spec.build(&mut it))
            .collect::<Result<Vec<_>>>()?;
        let used = total - it.count();
        if used != total {
            return Err(Error::Checkpoint(format!("stage {k} blob has {} unused values", total - used)));
        }
        stages.push(Stage {
            net: Sequential::new(layers),
            frozen: entry.frozen,
        });
    }
    Ok(Checkpoint {
        stack: GeneratorStack {
            config: m.generator,
            aabb: m.aabb,
            stages,
            z_star,
        },
        loss_weights: m.loss_weights,
        train_config: m.train_config,
        pose_model: m.pose_model,
    })
}
