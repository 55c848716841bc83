//! Differentiable emission-absorption rendering of feature grids.

mod march;
mod pose;
mod ray;
mod render;

pub use march::{
    grad_march, march_ray, march_ray_traced, march_ray_vjp, MarchTrace, RenderConfig, SamplingPolicy,
};
pub use pose::{linear_focal_schedule, sample_pose, PoseModel, WORLD_UP};
pub use ray::{generate_rays, pixel_ray, Ray};
pub use render::{render_image, render_patch_2d, render_patch_vjp};
