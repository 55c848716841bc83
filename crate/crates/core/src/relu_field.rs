//! Voxel ReLU field: a grid of raw features that is trilinearly interpolated
//! first and activated second.
//!
//! Nodes sit on cell corners and span the AABB inclusively: node `0` is at
//! `aabb.min` and node `n - 1` at `aabb.max` on every axis. Channel 0 holds raw
//! density, channels 1..4 raw RGB. The activation is a clamped ReLU,
//! `min(max(x, 0), 1)`, applied per channel after interpolation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::tensor::Tensor;

pub const CHANNELS: usize = 4;

/// Raw feature vector returned outside the AABB: empty space.
pub const OUTSIDE_RAW: [f64; CHANNELS] = [-1.0, 0.0, 0.0, 0.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).any(|a| !(min[a] < max[a])) {
            return Err(Error::InvalidArgument(format!(
                "aabb min {min:?} must be below max {max:?} on every axis"
            )));
        }
        Ok(Aabb { min, max })
    }

    /// The cube `[-1, 1]^3`.
    pub fn unit() -> Self {
        Aabb {
            min: [-1.0; 3],
            max: [1.0; 3],
        }
    }

    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| 0.5 * (self.min[a] + self.max[a]))
    }

    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.max[a] - self.min[a])
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

/// Activated field value at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    pub density: f64,
    pub rgb: [f64; 3],
}

#[inline]
pub fn activate(raw: f64) -> f64 {
    raw.clamp(0.0, 1.0)
}

/// Subgradient of [`activate`]: 1 strictly inside `(0, 1)`, 0 elsewhere.
#[inline]
pub fn activate_grad(raw: f64) -> f64 {
    if raw > 0.0 && raw < 1.0 {
        1.0
    } else {
        0.0
    }
}

/// The eight interpolation nodes around a point and their weights.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    /// Flat spatial node indices, `(z * ny + y) * nx + x`.
    pub nodes: [usize; 8],
    pub weights: [f64; 8],
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    aabb: Aabb,
    values: Tensor,
}

impl FeatureGrid {
    /// Grid of `dims = [nx, ny, nz]` nodes filled with one raw vector.
    pub fn filled(dims: [usize; 3], aabb: Aabb, raw: [f32; CHANNELS]) -> Result<Self> {
        check_dims(dims)?;
        let shape = [CHANNELS, dims[2], dims[1], dims[0]];
        let values = Tensor::from_fn(shape, |c, _, _, _| raw[c]);
        Ok(FeatureGrid { aabb, values })
    }

    /// Wraps a `[4, nz, ny, nx]` tensor.
    pub fn from_tensor(values: Tensor, aabb: Aabb) -> Result<Self> {
        let [c, nz, ny, nx] = values.shape();
        if c != CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "feature grid needs {CHANNELS} channels, got {c}"
            )));
        }
        check_dims([nx, ny, nz])?;
        if !values.is_finite() {
            return Err(Error::InvalidArgument("feature grid holds non-finite values".into()));
        }
        Ok(FeatureGrid { aabb, values })
    }

    pub fn from_fn(
        dims: [usize; 3],
        aabb: Aabb,
        mut f: impl FnMut(usize, usize, usize) -> [f32; CHANNELS],
    ) -> Result<Self> {
        let mut grid = Self::filled(dims, aabb, [0.0; CHANNELS])?;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    grid.set_node([x, y, z], f(x, y, z));
                }
            }
        }
        Ok(grid)
    }

    /// Node counts `[nx, ny, nz]`.
    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        let [_, nz, ny, nx] = self.values.shape();
        [nx, ny, nz]
    }

    #[inline]
    pub fn aabb(&self) -> &Aabb {
        &self.aabb
    }

    #[inline]
    pub fn values(&self) -> &Tensor {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut Tensor {
        &mut self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        self.values.data()
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        self.values.data_mut()
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.values.plane_len()
    }

    pub fn node(&self, ijk: [usize; 3]) -> [f32; CHANNELS] {
        [0, 1, 2, 3].map(|c| self.values.at(c, ijk[2], ijk[1], ijk[0]))
    }

    pub fn set_node(&mut self, ijk: [usize; 3], raw: [f32; CHANNELS]) {
        for (c, v) in raw.into_iter().enumerate() {
            self.values.set(c, ijk[2], ijk[1], ijk[0], v);
        }
    }

    /// World position of node `ijk`.
    pub fn node_position(&self, ijk: [usize; 3]) -> [f64; 3] {
        let dims = self.dims();
        [0, 1, 2].map(|a| {
            self.aabb.min[a] + self.aabb.extent()[a] * ijk[a] as f64 / (dims[a] - 1) as f64
        })
    }

    /// Node spacing per axis.
    pub fn cell_size(&self) -> [f64; 3] {
        let dims = self.dims();
        let ext = self.aabb.extent();
        [0, 1, 2].map(|a| ext[a] / (dims[a] - 1) as f64)
    }

    /// Interpolation stencil at `p`, or `None` outside the AABB.
    #[inline]
    pub fn stencil(&self, p: [f64; 3]) -> Option<Stencil> {
        let dims = self.dims();
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let lo = self.aabb.min[a];
            let hi = self.aabb.max[a];
            if !(p[a] >= lo && p[a] <= hi) {
                return None;
            }
            let u = (p[a] - lo) / (hi - lo) * (dims[a] - 1) as f64;
            let i = (u.floor() as usize).min(dims[a] - 2);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        let (nx, ny) = (dims[0], dims[1]);
        let origin = (base[2] * ny + base[1]) * nx + base[0];
        let step = [1, nx, nx * ny];
        let mut nodes = [0usize; 8];
        let mut weights = [0f64; 8];
        for corner in 0..8 {
            let mut idx = origin;
            let mut w = 1.0;
            for a in 0..3 {
                if corner >> a & 1 == 1 {
                    idx += step[a];
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            nodes[corner] = idx;
            weights[corner] = w;
        }
        Some(Stencil { nodes, weights })
    }

    /// Interpolated raw features at `p`; [`OUTSIDE_RAW`] outside the AABB.
    #[inline]
    pub fn trilerp(&self, p: [f64; 3]) -> [f64; CHANNELS] {
        match self.stencil(p) {
            Some(s) => self.apply_stencil(&s),
            None => OUTSIDE_RAW,
        }
    }

    #[inline]
    pub fn apply_stencil(&self, s: &Stencil) -> [f64; CHANNELS] {
        let plane = self.node_count();
        let data = self.values.data();
        let mut out = [0f64; CHANNELS];
        for (c, o) in out.iter_mut().enumerate() {
            let ch = &data[c * plane..(c + 1) * plane];
            *o = s
                .nodes
                .iter()
                .zip(&s.weights)
                .map(|(&n, &w)| w * ch[n] as f64)
                .sum();
        }
        out
    }

    /// Activated field value: `clamp(trilerp(p), 0, 1)` per channel.
    #[inline]
    pub fn field_eval(&self, p: [f64; 3]) -> FieldSample {
        let raw = self.trilerp(p);
        FieldSample {
            density: activate(raw[0]),
            rgb: [activate(raw[1]), activate(raw[2]), activate(raw[3])],
        }
    }

    /// Doubles the node count on every axis by sampling the field at the new
    /// node positions. The AABB is unchanged.
    pub fn upsample2x(&self) -> FeatureGrid {
        let dims = self.dims();
        let mut t = self.values.clone();
        // axes in tensor order: x = 3, y = 2, z = 1
        for (axis, n) in [(3usize, dims[0]), (2, dims[1]), (1, dims[2])] {
            t = resample_axis(&t, axis, 2 * n);
        }
        FeatureGrid {
            aabb: self.aabb,
            values: t,
        }
    }

    /// Halves the node count on every axis by averaging 2x2x2 blocks.
    pub fn avg_pool2x(&self) -> Result<FeatureGrid> {
        let dims = self.dims();
        if dims.iter().any(|&n| n % 2 != 0 || n < 4) {
            return Err(Error::InvalidArgument(format!(
                "average pooling needs even dims of at least 4, got {dims:?}"
            )));
        }
        let out_dims = dims.map(|n| n / 2);
        let mut out = Tensor::zeros([CHANNELS, out_dims[2], out_dims[1], out_dims[0]]);
        for c in 0..CHANNELS {
            for z in 0..out_dims[2] {
                for y in 0..out_dims[1] {
                    for x in 0..out_dims[0] {
                        let mut acc = 0f32;
                        for k in 0..8 {
                            acc += self.values.at(
                                c,
                                2 * z + (k >> 2 & 1),
                                2 * y + (k >> 1 & 1),
                                2 * x + (k & 1),
                            );
                        }
                        out.set(c, z, y, x, acc / 8.0);
                    }
                }
            }
        }
        FeatureGrid::from_tensor(out, self.aabb)
    }

    /// Copy with every raw value clamped to `[-1, 1]`. The activated field is
    /// unchanged since the activation saturates outside `[0, 1]`.
    pub fn clamped_to_unit_range(&self) -> FeatureGrid {
        FeatureGrid {
            aabb: self.aabb,
            values: self.values.map(|v| v.clamp(-1.0, 1.0)),
        }
    }

    /// Raw sub-block with `corner` and `size` given as `[x, y, z]` node counts.
    pub fn extract_patch_3d(&self, corner: [usize; 3], size: [usize; 3]) -> Result<Tensor> {
        let dims = self.dims();
        for a in 0..3 {
            if size[a] == 0 || corner[a] + size[a] > dims[a] {
                return Err(Error::OutOfBounds(format!(
                    "patch corner {corner:?} size {size:?} exceeds grid dims {dims:?}"
                )));
            }
        }
        self.values
            .crop([corner[2], corner[1], corner[0]], [size[2], size[1], size[0]])
    }

    /// Patch at a corner drawn uniformly over all valid positions.
    pub fn random_patch_3d(&self, size: [usize; 3], rng: &mut Rng) -> Result<([usize; 3], Tensor)> {
        let corner = random_corner(self.dims(), size, rng)?;
        Ok((corner, self.extract_patch_3d(corner, size)?))
    }
}

/// Uniform corner for a `size` window inside `dims` (both `[x, y, z]`).
pub fn random_corner(dims: [usize; 3], size: [usize; 3], rng: &mut Rng) -> Result<[usize; 3]> {
    if (0..3).any(|a| size[a] == 0 || size[a] > dims[a]) {
        return Err(Error::OutOfBounds(format!(
            "patch size {size:?} invalid for grid dims {dims:?}"
        )));
    }
    Ok([0, 1, 2].map(|a| rng.random_range(0..=dims[a] - size[a])))
}

fn check_dims(dims: [usize; 3]) -> Result<()> {
    if dims.iter().any(|&n| n < 2) {
        return Err(Error::InvalidArgument(format!(
            "feature grid needs at least 2 nodes per axis, got {dims:?}"
        )));
    }
    Ok(())
}

/// Linear resampling of one tensor axis from `n` to `m` corner-aligned nodes.
fn resample_axis(t: &Tensor, axis: usize, m: usize) -> Tensor {
    let shape = t.shape();
    let n = shape[axis];
    let mut out_shape = shape;
    out_shape[axis] = m;
    let taps: Vec<(usize, f32)> = (0..m)
        .map(|j| {
            let u = j as f64 * (n - 1) as f64 / (m - 1) as f64;
            let i = (u.floor() as usize).min(n - 2);
            (i, (u - i as f64) as f32)
        })
        .collect();
    Tensor::from_fn(out_shape, |c, z, y, x| {
        let mut idx = [c, z, y, x];
        let (i, f) = taps[idx[axis]];
        idx[axis] = i;
        let a = t.at(idx[0], idx[1], idx[2], idx[3]);
        idx[axis] = i + 1;
        let b = t.at(idx[0], idx[1], idx[2], idx[3]);
        a + f * (b - a)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;

    fn unit_grid(dims: [usize; 3], f: impl FnMut(usize, usize, usize) -> [f32; 4]) -> FeatureGrid {
        FeatureGrid::from_fn(dims, Aabb::unit(), f).unwrap()
    }

    #[test]
    fn trilerp_hits_nodes_exactly() {
        let g = unit_grid([3, 4, 5], |x, y, z| {
            [x as f32 * 0.1, y as f32 * 0.2, z as f32 * 0.05, -0.3]
        });
        for ijk in [[0, 0, 0], [2, 3, 4], [1, 2, 3]] {
            let raw = g.trilerp(g.node_position(ijk));
            let node = g.node(ijk);
            for c in 0..4 {
                assert!((raw[c] - node[c] as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn trilerp_midpoint_weights_half() {
        // densities 0.2 at x=0 and 0.6 at x=1 on every y/z pair
        let g = unit_grid([2, 2, 2], |x, _, _| [if x == 0 { 0.2 } else { 0.6 }, 0.0, 0.0, 0.0]);
        let raw = g.trilerp([0.0, -0.3, 0.7]);
        assert!((raw[0] - 0.4).abs() < 1e-7);
    }

    #[test]
    fn outside_is_empty_space() {
        let g = unit_grid([2, 2, 2], |_, _, _| [1.0, 1.0, 1.0, 1.0]);
        assert_eq!(g.trilerp([1.5, 0.0, 0.0]), OUTSIDE_RAW);
        assert_eq!(g.field_eval([0.0, -2.0, 0.0]).density, 0.0);
    }

    #[test]
    fn interpolation_precedes_activation() {
        // raw -1 at x=0, +1 at x=1; query 0.75 of the way along the edge.
        let g = unit_grid([2, 2, 2], |x, _, _| [if x == 0 { -1.0 } else { 1.0 }, 0.0, 0.0, 0.0]);
        let p = [-1.0 + 2.0 * 0.75, -1.0, -1.0];
        assert!((g.field_eval(p).density - 0.5).abs() < 1e-12);
        // activating the nodes first would give 0.25 * 0 + 0.75 * 1
        let activate_first = 0.25 * activate(-1.0) + 0.75 * activate(1.0);
        assert!((activate_first - 0.75).abs() < 1e-12);
    }

    #[test]
    fn negative_corners_give_zero_density_and_overshoot_clamps() {
        let g = unit_grid([2, 2, 2], |_, _, _| [-1.0, 1.5, 0.5, -0.2]);
        let s = g.field_eval([0.1, 0.2, 0.3]);
        assert_eq!(s.density, 0.0);
        assert_eq!(s.rgb, [1.0, 0.5, 0.0]);
    }

    #[test]
    fn upsample_constant_and_linear() {
        let g = unit_grid([3, 2, 4], |_, _, _| [0.3, -0.2, 0.9, 0.0]);
        let u = g.upsample2x();
        assert_eq!(u.dims(), [6, 4, 8]);
        assert!(u.data().chunks(u.node_count()).enumerate().all(|(c, ch)| {
            ch.iter().all(|&v| (v - [0.3, -0.2, 0.9, 0.0][c]).abs() < 1e-6)
        }));

        let lin = unit_grid([4, 3, 3], |x, _, _| [x as f32 * 0.25 - 0.5, 0.0, 0.0, 0.0]);
        let u = lin.upsample2x();
        for x in 0..8 {
            let p = u.node_position([x, 1, 2]);
            // raw density is linear in world x: -0.5 at x=-1, +0.25 at x=+1
            let expected = -0.5 + 0.75 * (p[0] + 1.0) / 2.0;
            assert!((u.node([x, 1, 2])[0] as f64 - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn upsample_of_single_cell_preserves_field() {
        let g = unit_grid([2, 2, 2], |x, y, z| [(x + 2 * y + 4 * z) as f32 / 8.0, 0.1, 0.2, 0.3]);
        let u = g.upsample2x();
        assert_eq!(u.dims(), [4, 4, 4]);
        let mean: f64 = (0..8).map(|k| k as f64 / 8.0).sum::<f64>() / 8.0;
        assert!((u.trilerp([0.0, 0.0, 0.0])[0] - mean).abs() < 1e-6);
        for ijk in [[0, 0, 0], [1, 0, 1], [1, 1, 1]] {
            let p = g.node_position(ijk);
            assert!((u.trilerp(p)[0] - g.trilerp(p)[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn avg_pool_halves() {
        let g = unit_grid([4, 4, 4], |x, _, _| [x as f32, 0.0, 0.0, 0.0]);
        let p = g.avg_pool2x().unwrap();
        assert_eq!(p.dims(), [2, 2, 2]);
        assert_eq!(p.node([0, 0, 0])[0], 0.5);
        assert_eq!(p.node([1, 1, 1])[0], 2.5);
        assert!(unit_grid([3, 4, 4], |_, _, _| [0.0; 4]).avg_pool2x().is_err());
    }

    #[test]
    fn patch_extraction_by_index_formula() {
        let g = unit_grid([5, 5, 5], |x, y, z| [(x + 10 * y + 100 * z) as f32, 0.0, 0.0, 0.0]);
        let p = g.extract_patch_3d([1, 2, 3], [2, 2, 2]).unwrap();
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let expected = (1 + dx) + 10 * (2 + dy) + 100 * (3 + dz);
                    assert_eq!(p.at(0, dz, dy, dx), expected as f32);
                }
            }
        }
        let whole = g.extract_patch_3d([0, 0, 0], [5, 5, 5]).unwrap();
        assert_eq!(&whole, g.values());
        assert!(g.extract_patch_3d([0, 0, 0], [6, 5, 5]).is_err());
        assert!(g.extract_patch_3d([4, 0, 0], [2, 1, 1]).is_err());
    }

    #[test]
    fn random_patch_full_size_and_zero_size() {
        let g = unit_grid([3, 3, 3], |_, _, _| [0.0; 4]);
        let mut rng = rng_from_seed(3);
        for _ in 0..10 {
            assert_eq!(g.random_patch_3d([3, 3, 3], &mut rng).unwrap().0, [0, 0, 0]);
        }
        assert!(g.random_patch_3d([0, 1, 1], &mut rng).is_err());
    }

    #[test]
    fn random_patch_corner_is_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let g = unit_grid([6, 4, 3], |_, _, _| [0.0; 4]);
        let size = [3, 2, 2];
        // 4 * 3 * 2 = 24 possible corners
        let mut counts = vec![0f64; 24];
        let mut rng = rng_from_seed(11);
        let draws = 10_000;
        for _ in 0..draws {
            let (c, _) = g.random_patch_3d(size, &mut rng).unwrap();
            counts[c[0] + 4 * (c[1] + 3 * c[2])] += 1.0;
        }
        let expected = draws as f64 / 24.0;
        let chi2: f64 = counts.iter().map(|o| (o - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(23.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2} p {p}");
    }

    fn small_grid() -> impl Strategy<Value = FeatureGrid> {
        (2usize..5, 2usize..5, 2usize..5).prop_flat_map(|(nx, ny, nz)| {
            prop::collection::vec(-1.5f32..1.5, nx * ny * nz * 4).prop_map(move |v| {
                FeatureGrid::from_tensor(Tensor::from_vec([4, nz, ny, nx], v).unwrap(), Aabb::unit())
                    .unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn eval_is_clamped_trilerp(g in small_grid(), p in prop::array::uniform3(-1.2f64..1.2)) {
            let raw = g.trilerp(p);
            let s = g.field_eval(p);
            prop_assert_eq!(s.density, raw[0].clamp(0.0, 1.0));
            for c in 0..3 {
                prop_assert_eq!(s.rgb[c], raw[c + 1].clamp(0.0, 1.0));
            }
        }

        #[test]
        fn eval_is_lipschitz(g in small_grid(), p in prop::array::uniform3(-1.0f64..1.0),
                             d in prop::array::uniform3(-0.05f64..0.05)) {
            let q = [0, 1, 2].map(|a| (p[a] + d[a]).clamp(-1.0, 1.0));
            let (lo, hi) = g.data().iter().fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
            let range = (hi - lo) as f64;
            let cell = g.cell_size();
            // per-axis bound summed along the displacement
            let bound: f64 = (0..3).map(|a| range / cell[a] * (q[a] - p[a]).abs()).sum();
            let a = g.field_eval(p);
            let b = g.field_eval(q);
            prop_assert!((a.density - b.density).abs() <= bound + 1e-9);
            for c in 0..3 {
                prop_assert!((a.rgb[c] - b.rgb[c]).abs() <= bound + 1e-9);
            }
        }

        #[test]
        fn upsample_keeps_corner_nodes(g in small_grid()) {
            let u = g.upsample2x();
            let d = g.dims();
            let du = u.dims();
            for k in 0..8usize {
                let pick = |a: usize, n: usize| if k >> a & 1 == 1 { n - 1 } else { 0 };
                let old = g.node([pick(0, d[0]), pick(1, d[1]), pick(2, d[2])]);
                let new = u.node([pick(0, du[0]), pick(1, du[1]), pick(2, du[2])]);
                for c in 0..4 {
                    prop_assert!((old[c] - new[c]).abs() < 1e-6);
                }
            }
        }
    }
}
