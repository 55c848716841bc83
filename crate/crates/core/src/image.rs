use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Linear RGB image, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Image { width, height, data }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height} RGB image needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> [f32; 3] {
        let i = (v * self.width + u) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, u: usize, v: usize, rgb: [f32; 3]) {
        let i = (v * self.width + u) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn crop(&self, corner: [usize; 2], size: [usize; 2]) -> Result<Image> {
        if size[0] == 0
            || size[1] == 0
            || corner[0] + size[0] > self.width
            || corner[1] + size[1] > self.height
        {
            return Err(Error::OutOfBounds(format!(
                "crop at {corner:?} of size {size:?} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut out = Image::new(size[0], size[1]);
        for v in 0..size[1] {
            let src = ((corner[1] + v) * self.width + corner[0]) * 3;
            out.data[v * size[0] * 3..(v + 1) * size[0] * 3]
                .copy_from_slice(&self.data[src..src + size[0] * 3]);
        }
        Ok(out)
    }

    pub fn mse(&self, other: &Image) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        Ok(sum / self.data.len().max(1) as f64)
    }

    /// Channel-planar `[3, 1, height, width]` tensor for the 2D networks.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_fn([3, 1, self.height, self.width], |c, _, y, x| {
            self.data[(y * self.width + x) * 3 + c]
        })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Image> {
        let [c, d, h, w] = t.shape();
        if c != 3 || d != 1 {
            return Err(Error::ShapeMismatch(format!("expected [3, 1, h, w], got {:?}", t.shape())));
        }
        let mut img = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set_pixel(x, y, [t.at(0, 0, y, x), t.at(1, 0, y, x), t.at(2, 0, y, x)]);
            }
        }
        Ok(img)
    }

    /// 8-bit RGBA bytes for display.
    pub fn to_rgba8(&self) -> Vec<u8> {
        self.data
            .chunks_exact(3)
            .flat_map(|p| [quantize(p[0]), quantize(p[1]), quantize(p[2]), 255])
            .collect()
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Peak signal-to-noise ratio for unit-range images. Identical images report
/// [`PSNR_IDENTICAL`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(a.mse(b)?))
}

pub const PSNR_IDENTICAL: f64 = 99.0;

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_IDENTICAL
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_IDENTICAL)
    }
}
