use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};

pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Pinhole camera. `rotation` and `translation` map world to camera
/// coordinates, `x_cam = R x_world + t`. Camera space looks down `+z` with `+x`
/// to the right and `+y` down the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub focal: f64,
    pub principal_point: [f64; 2],
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(
        rotation: Mat3,
        translation: Vec3,
        focal: f64,
        principal_point: [f64; 2],
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = Camera {
            rotation,
            translation,
            focal,
            principal_point,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let err = math::orthonormality_error(&self.rotation);
        if !(err <= ROTATION_TOLERANCE) {
            return Err(Error::Schema(format!(
                "rotation is not orthonormal (|RᵀR - I| = {err:.3e})"
            )));
        }
        if !(self.focal > 0.0) || !self.focal.is_finite() {
            return Err(Error::Schema(format!("focal must be positive, got {}", self.focal)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Schema("image size must be positive".into()));
        }
        let [cx, cy] = self.principal_point;
        if !(cx >= 0.0 && cx <= self.width as f64 && cy >= 0.0 && cy <= self.height as f64) {
            return Err(Error::Schema(format!(
                "principal point ({cx}, {cy}) outside the {}x{} image",
                self.width, self.height
            )));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("translation is not finite".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`. If `up` is (anti)parallel to the
    /// view direction the world x-axis is used instead.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: u32, height: u32) -> Result<Self> {
        let forward = math::normalize(math::sub(target, eye));
        let mut right = math::cross(forward, up);
        if math::norm(right) < 1e-9 {
            right = math::cross(forward, [1.0, 0.0, 0.0]);
        }
        let right = math::normalize(right);
        let down = math::cross(forward, right);
        let rotation = [right, down, forward];
        let translation = math::scale(math::mat_vec(&rotation, eye), -1.0);
        Camera::new(
            rotation,
            translation,
            focal,
            [width as f64 / 2.0, height as f64 / 2.0],
            width,
            height,
        )
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vec3 {
        math::scale(math::mat_t_vec(&self.rotation, self.translation), -1.0)
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation[2]
    }

    /// Unit world-space direction through the center of pixel `(u, v)`.
    #[inline]
    pub fn pixel_direction(&self, u: f64, v: f64) -> Vec3 {
        let local = [
            (u + 0.5 - self.principal_point[0]) / self.focal,
            (v + 0.5 - self.principal_point[1]) / self.focal,
            1.0,
        ];
        math::normalize(math::mat_t_vec(&self.rotation, local))
    }

    /// Projects a world point to continuous pixel coordinates (pixel `u` spans
    /// `[u, u + 1)`). `None` behind the camera.
    pub fn project(&self, p: Vec3) -> Option<[f64; 2]> {
        let c = math::add(math::mat_vec(&self.rotation, p), self.translation);
        if c[2] <= 0.0 {
            return None;
        }
        Some([
            self.focal * c[0] / c[2] + self.principal_point[0],
            self.focal * c[1] / c[2] + self.principal_point[1],
        ])
    }
}
