//! Progressive multi-scale generator with 2D and 3D patch critics.
//!
//! Stage `k` produces a grid of `noise_extent * 2^(k+1)` nodes per axis.
//! Real 2D patches are always renders of the reference grid under the pose
//! model, real 3D patches are sub-blocks of it; the posed input photographs
//! play no part here.

mod checkpoint;
mod critic;
mod generator;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, MANIFEST_FILE};
pub use critic::{critic_loss_wgan, critic_optimizer, critic_step, generator_adv_loss, Critic, CriticPair, PatchCritic};
pub use generator::{
    generate, retarget, GeneratorConfig, GeneratorStack, NoiseGrid, Stage, StageTrace, MIN_NOISE_EXTENT,
};
pub use train::{
    generator_objective, reference_pyramid, sample_noises, total_generator_loss, train_progressive, train_stage,
    GanConfig, GanLogRecord, GeneratorTerms, LossWeights,
};
