//! Hemisphere pose distribution used for training-time renders.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::relu_field::Aabb;
use crate::scene_io::Camera;
use crate::seed::Rng;

pub const WORLD_UP: Vec3 = [0.0, 0.0, 1.0];

/// Elevations this close to the pole use the x-axis as up vector.
const POLE_EPS: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseModel {
    pub center: Vec3,
    pub radius: f64,
    /// `[lo, hi]` in radians above the horizontal plane.
    pub elevation_range: [f64; 2],
    /// Focal length per stage; the last entry is the exemplar focal.
    pub focal_schedule: Vec<f64>,
    pub width: u32,
    pub height: u32,
}

impl PoseModel {
    /// Radius 2.5x the AABB half-diagonal, elevations 15°–75°, and a focal
    /// length varied linearly from half the exemplar focal at stage 0 to the
    /// exemplar focal at the last stage.
    pub fn for_aabb(aabb: &Aabb, exemplar_focal: f64, stages: usize, width: u32, height: u32) -> Result<Self> {
        let model = PoseModel {
            center: aabb.center(),
            radius: 2.5 * 0.5 * aabb.diagonal(),
            elevation_range: [15f64.to_radians(), 75f64.to_radians()],
            focal_schedule: linear_focal_schedule(exemplar_focal, stages),
            width,
            height,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::InvalidArgument("pose radius must be positive".into()));
        }
        let [lo, hi] = self.elevation_range;
        if !(lo <= hi && lo >= -FRAC_PI_2 && hi <= FRAC_PI_2) {
            return Err(Error::InvalidArgument(format!("bad elevation range [{lo}, {hi}]")));
        }
        if self.focal_schedule.is_empty() || self.focal_schedule.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::InvalidArgument("focal schedule needs positive entries".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("pose image size must be positive".into()));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.focal_schedule.len()
    }

    pub fn exemplar_focal(&self) -> f64 {
        *self.focal_schedule.last().expect("validated non-empty")
    }

    /// Camera on the hemisphere at the given angles looking at the center.
    pub fn camera_at(&self, azimuth: f64, elevation: f64, stage: usize) -> Result<Camera> {
        let focal = *self.focal_schedule.get(stage).ok_or_else(|| {
            Error::OutOfBounds(format!(
                "stage {stage} outside focal schedule of length {}",
                self.focal_schedule.len()
            ))
        })?;
        let (se, ce) = elevation.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        let eye = [
            self.center[0] + self.radius * ce * ca,
            self.center[1] + self.radius * ce * sa,
            self.center[2] + self.radius * se,
        ];
        let up = if (elevation.abs() - FRAC_PI_2).abs() < POLE_EPS {
            [1.0, 0.0, 0.0]
        } else {
            WORLD_UP
        };
        Camera::look_at(eye, self.center, up, focal, self.width, self.height)
    }

    /// Azimuth uniform in `[0, 2π)`, elevation uniform in the range.
    pub fn sample_angles(&self, rng: &mut Rng) -> (f64, f64) {
        let azimuth = rng.random::<f64>() * 2.0 * PI;
        let [lo, hi] = self.elevation_range;
        let elevation = lo + (hi - lo) * rng.random::<f64>();
        (azimuth, elevation)
    }
}

pub fn linear_focal_schedule(exemplar_focal: f64, stages: usize) -> Vec<f64> {
    let stages = stages.max(1);
    let mut schedule: Vec<f64> = (0..stages)
        .map(|k| {
            let t = if stages == 1 { 1.0 } else { k as f64 / (stages - 1) as f64 };
            exemplar_focal * (0.5 + 0.5 * t)
        })
        .collect();
    *schedule.last_mut().unwrap() = exemplar_focal;
    schedule
}

pub fn sample_pose(model: &PoseModel, stage: usize, rng: &mut Rng) -> Result<Camera> {
    let (azimuth, elevation) = model.sample_angles(rng);
    model.camera_at(azimuth, elevation, stage)
}
