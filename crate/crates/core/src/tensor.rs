//! Dense channel-planar volumes.
//!
//! Layout is `[channels, depth, height, width]` with width (x) fastest, the
//! same ordering used by the RFG1 grid file. 2D images handed to the
//! networks are volumes with `depth == 1`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: [usize; 4], value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "tensor of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for c in 0..shape[0] {
            for z in 0..shape[1] {
                for y in 0..shape[2] {
                    for x in 0..shape[3] {
                        data.push(f(c, z, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    /// Spatial extent as `[depth, height, width]`.
    #[inline]
    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[1], self.shape[2], self.shape[3]]
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, z: usize, y: usize, x: usize) -> usize {
        ((c * self.shape[1] + z) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, c: usize, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, z: usize, y: usize, x: usize, v: f32) {
        let i = self.index(c, z, y, x);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn scale(&mut self, k: f32) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Tensor> {
        if self.spatial() != other.spatial() {
            return Err(Error::ShapeMismatch(format!(
                "cannot concatenate spatial extents {:?} and {:?}",
                self.spatial(),
                other.spatial()
            )));
        }
        let mut data = Vec::with_capacity(self.len() + other.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        let [_, d, h, w] = self.shape;
        Ok(Tensor {
            shape: [self.shape[0] + other.shape[0], d, h, w],
            data,
        })
    }

    /// Copy of the spatial block `[corner, corner + size)` (all channels).
    /// `corner` and `size` are `[z, y, x]`.
    pub fn crop(&self, corner: [usize; 3], size: [usize; 3]) -> Result<Tensor> {
        self.check_window(corner, size)?;
        let mut out = Tensor::zeros([self.shape[0], size[0], size[1], size[2]]);
        let mut o = 0;
        for c in 0..self.shape[0] {
            for z in 0..size[0] {
                for y in 0..size[1] {
                    let start = self.index(c, corner[0] + z, corner[1] + y, corner[2]);
                    out.data[o..o + size[2]].copy_from_slice(&self.data[start..start + size[2]]);
                    o += size[2];
                }
            }
        }
        Ok(out)
    }

    /// Adds `patch` into the block at `corner`; the adjoint of [`Tensor::crop`].
    pub fn add_crop(&mut self, corner: [usize; 3], patch: &Tensor) -> Result<()> {
        let size = patch.spatial();
        self.check_window(corner, size)?;
        if patch.channels() != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "patch has {} channels, target {}",
                patch.channels(),
                self.channels()
            )));
        }
        let mut o = 0;
        for c in 0..self.shape[0] {
            for z in 0..size[0] {
                for y in 0..size[1] {
                    let start = self.index(c, corner[0] + z, corner[1] + y, corner[2]);
                    self.data[start..start + size[2]]
                        .iter_mut()
                        .zip(&patch.data[o..o + size[2]])
                        .for_each(|(a, b)| *a += b);
                    o += size[2];
                }
            }
        }
        Ok(())
    }

    fn check_window(&self, corner: [usize; 3], size: [usize; 3]) -> Result<()> {
        let ext = self.spatial();
        for a in 0..3 {
            if size[a] == 0 || corner[a] + size[a] > ext[a] {
                return Err(Error::OutOfBounds(format!(
                    "window corner {corner:?} size {size:?} outside extent {ext:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn mse(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other)?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        Ok(sum / self.data.len().max(1) as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}
