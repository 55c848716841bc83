//! Visual quality as a view-averaged single-image Fréchet distance and scene
//! diversity as the across-seed variance of a fixed rendered window.

mod extractor;
mod frechet;
mod quality;

pub use extractor::{FeatureExtractor, RANDOM_V1_SEED, RANDOM_V1_WIDTH};
pub use frechet::{frechet_distance, SQRT_EPS};
pub use quality::{
    evaluate_report, patch_variance, scene_diversity, visual_quality, EvaluationReport, GridSampler, MetricsConfig,
    PatchSpec, PerturbedGrid,
};
