use crate::math::{self, Vec3};
use crate::relu_field::Aabb;
use crate::scene_io::Camera;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    /// Ray from `origin` along unit `direction`, clipped to `aabb` with the slab
    /// test. A miss yields a degenerate ray with `t_near == t_far == 0`.
    pub fn clipped(origin: Vec3, direction: Vec3, aabb: &Aabb) -> Ray {
        let mut t_near = 0f64;
        let mut t_far = f64::INFINITY;
        for a in 0..3 {
            if direction[a].abs() < 1e-12 {
                if origin[a] < aabb.min[a] || origin[a] > aabb.max[a] {
                    return Ray::miss(origin, direction);
                }
                continue;
            }
            let inv = 1.0 / direction[a];
            let t1 = (aabb.min[a] - origin[a]) * inv;
            let t2 = (aabb.max[a] - origin[a]) * inv;
            t_near = t_near.max(t1.min(t2));
            t_far = t_far.min(t1.max(t2));
        }
        if t_far > t_near {
            Ray {
                origin,
                direction,
                t_near,
                t_far,
            }
        } else {
            Ray::miss(origin, direction)
        }
    }

    fn miss(origin: Vec3, direction: Vec3) -> Ray {
        Ray {
            origin,
            direction,
            t_near: 0.0,
            t_far: 0.0,
        }
    }

    /// True when the ray does not cross the AABB and renders pure background.
    #[inline]
    pub fn is_degenerate(&self) -> bool {
        !(self.t_far > self.t_near)
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        math::add(self.origin, math::scale(self.direction, t))
    }
}

/// Pinhole rays through the centers of `pixels` (`(u, v)` integer
/// coordinates), clipped to `aabb`.
pub fn generate_rays(camera: &Camera, pixels: &[(usize, usize)], aabb: &Aabb) -> Vec<Ray> {
    let origin = camera.center();
    pixels
        .iter()
        .map(|&(u, v)| Ray::clipped(origin, camera.pixel_direction(u as f64, v as f64), aabb))
        .collect()
}

#[inline]
pub fn pixel_ray(camera: &Camera, u: usize, v: usize, aabb: &Aabb) -> Ray {
    Ray::clipped(camera.center(), camera.pixel_direction(u as f64, v as f64), aabb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn camera_on_axis() -> Camera {
        // at (0, 0, -3) looking at the origin
        Camera::look_at([0.0, 0.0, -3.0], [0.0; 3], [0.0, 1.0, 0.0], 32.0, 64, 64).unwrap()
    }

    #[test]
    fn principal_ray_is_forward_axis() {
        let cam = camera_on_axis();
        // pixel (31.5, 31.5) is the principal point; the direction uses pixel centers
        let d = cam.pixel_direction(31.5, 31.5);
        assert!(math::norm(math::sub(d, cam.forward())) < 1e-12);
    }

    #[test]
    fn slab_clip_on_axis() {
        let cam = camera_on_axis();
        let r = Ray::clipped(cam.center(), cam.forward(), &Aabb::unit());
        assert!((r.t_near - 2.0).abs() < 1e-12);
        assert!((r.t_far - 4.0).abs() < 1e-12);
    }

    #[test]
    fn looking_away_misses() {
        let cam = Camera::look_at([0.0, 0.0, -3.0], [0.0, 0.0, -6.0], [0.0, 1.0, 0.0], 32.0, 64, 64).unwrap();
        let rays = generate_rays(&cam, &[(0, 0), (32, 32), (63, 63)], &Aabb::unit());
        assert!(rays.iter().all(Ray::is_degenerate));
    }

    #[test]
    fn origin_inside_starts_at_zero() {
        let r = Ray::clipped([0.0; 3], [1.0, 0.0, 0.0], &Aabb::unit());
        assert_eq!((r.t_near, r.t_far), (0.0, 1.0));
    }
}
