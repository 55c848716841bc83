//! Procedural exemplar scenes made of axis-aligned boxes and spheres.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relu_field::{Aabb, FeatureGrid};
use crate::renderer::{render_image, sample_pose, PoseModel, RenderConfig};
use crate::scene_io::PosedImageSet;
use crate::seed::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Boxes,
    Spheres,
    Mixed,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boxes" => Ok(SceneKind::Boxes),
            "spheres" => Ok(SceneKind::Spheres),
            "mixed" => Ok(SceneKind::Mixed),
            other => Err(Error::InvalidArgument(format!(
                "unknown scene kind {other:?} (expected boxes, spheres or mixed)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Box,
    Sphere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub center: [f64; 3],
    /// Half extents for boxes; spheres use `extent[0]` as radius.
    pub extent: [f64; 3],
    pub color: [f32; 3],
}

impl Primitive {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        match self.kind {
            PrimitiveKind::Box => (0..3).all(|a| (p[a] - self.center[a]).abs() <= self.extent[a]),
            PrimitiveKind::Sphere => {
                let r = self.extent[0];
                (0..3).map(|a| (p[a] - self.center[a]).powi(2)).sum::<f64>() <= r * r
            }
        }
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let half = match self.kind {
            PrimitiveKind::Box => self.extent,
            PrimitiveKind::Sphere => [self.extent[0]; 3],
        };
        (
            [0, 1, 2].map(|a| self.center[a] - half[a]),
            [0, 1, 2].map(|a| self.center[a] + half[a]),
        )
    }
}

pub const PALETTE: [[f32; 3]; 8] = [
    [0.90, 0.25, 0.20],
    [0.20, 0.65, 0.30],
    [0.20, 0.35, 0.85],
    [0.95, 0.80, 0.20],
    [0.80, 0.40, 0.80],
    [0.25, 0.80, 0.85],
    [0.95, 0.55, 0.15],
    [0.85, 0.85, 0.85],
];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub ground_truth_grid: FeatureGrid,
    pub primitives: Vec<Primitive>,
    pub rng_seed: u64,
}

/// Places `count` primitives uniformly at random inside the unit AABB and
/// voxelizes them into a `resolution³` grid: raw density `+1` on nodes inside
/// any primitive and `-1` elsewhere; raw color from the last primitive that
/// covers the node, `0` in empty space.
pub fn make_synthetic_scene(kind: SceneKind, count: usize, resolution: usize, rng_seed: u64) -> Result<SyntheticScene> {
    if !(16..=256).contains(&resolution) {
        return Err(Error::InvalidArgument(format!(
            "resolution {resolution} outside [16, 256]"
        )));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("a scene needs at least one primitive".into()));
    }
    let aabb = Aabb::unit();
    let ext = aabb.extent();
    let mut rng = rng_from_seed(rng_seed);
    let mut primitives = Vec::with_capacity(count);
    while primitives.len() < count {
        let prim_kind = match kind {
            SceneKind::Boxes => PrimitiveKind::Box,
            SceneKind::Spheres => PrimitiveKind::Sphere,
            SceneKind::Mixed => {
                if rng.random::<bool>() {
                    PrimitiveKind::Box
                } else {
                    PrimitiveKind::Sphere
                }
            }
        };
        let extent = match prim_kind {
            PrimitiveKind::Box => [0, 1, 2].map(|a| ext[a] * rng.random_range(0.04..0.12)),
            PrimitiveKind::Sphere => [ext[0].min(ext[1]).min(ext[2]) * rng.random_range(0.05..0.12); 3],
        };
        let color = PALETTE[rng.random_range(0..PALETTE.len())];
        // rejection-sample the center until the primitive fits in the AABB
        loop {
            let center = [0, 1, 2].map(|a| aabb.min[a] + ext[a] * rng.random::<f64>());
            let prim = Primitive {
                kind: prim_kind,
                center,
                extent,
                color,
            };
            let (lo, hi) = prim.bounds();
            if aabb.contains(lo) && aabb.contains(hi) {
                primitives.push(prim);
                break;
            }
        }
    }
    let mut grid = FeatureGrid::filled([resolution; 3], aabb, [-1.0, 0.0, 0.0, 0.0])?;
    for z in 0..resolution {
        for y in 0..resolution {
            for x in 0..resolution {
                let p = grid.node_position([x, y, z]);
                if let Some(prim) = primitives.iter().rev().find(|q| q.contains(p)) {
                    let [r, g, b] = prim.color;
                    grid.set_node([x, y, z], [1.0, r, g, b]);
                }
            }
        }
    }
    Ok(SyntheticScene {
        ground_truth_grid: grid,
        primitives,
        rng_seed,
    })
}

/// Focal length (pixels) used for synthetic datasets of square `image_size`
/// images; frames the whole AABB from the default pose radius.
pub fn dataset_focal(image_size: usize) -> f64 {
    1.1 * image_size as f64
}

/// Renders `n_views` hemisphere views of the ground-truth grid.
pub fn render_dataset(scene: &SyntheticScene, n_views: usize, image_size: usize, rng_seed: u64) -> Result<PosedImageSet> {
    if n_views == 0 {
        return Err(Error::InvalidArgument("n_views must be at least 1".into()));
    }
    if image_size == 0 {
        return Err(Error::InvalidArgument("image_size must be positive".into()));
    }
    let grid = &scene.ground_truth_grid;
    let size = image_size as u32;
    let poses = PoseModel::for_aabb(grid.aabb(), dataset_focal(image_size), 1, size, size)?;
    let cfg = RenderConfig::evaluation(grid.aabb());
    let mut rng = rng_from_seed(rng_seed);
    let mut images = Vec::with_capacity(n_views);
    let mut cameras = Vec::with_capacity(n_views);
    for _ in 0..n_views {
        let cam = sample_pose(&poses, 0, &mut rng)?;
        images.push(render_image(grid, &cam, &cfg));
        cameras.push(cam);
    }
    PosedImageSet::new(images, cameras)
}
