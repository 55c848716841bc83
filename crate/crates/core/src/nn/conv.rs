//! Stride-1 "same" convolutions and a 2x transposed convolution, lowered to
//! GEMM. A convolution is a sum over kernel taps of one GEMM each against
//! the zero-padded input read at a shifted offset.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::seed::Rng;
use crate::tensor::Tensor;

/// `c = a(m×k) · b(k×n) + beta * c`, arbitrary strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the slices cover every index addressed by the given shapes and
    // strides (asserted above), and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Layout of a volume padded by half the kernel on every side. Output
/// position `l` of a shifted GEMM corresponds to padded index `lo + l`.
struct Padded {
    dims: [usize; 3],
    pad: [usize; 3],
    /// Padded `[d, h, w]`.
    outer: [usize; 3],
    lo: usize,
    len: usize,
}

impl Padded {
    fn new([d, h, w]: [usize; 3], [kd, kh, kw]: [usize; 3]) -> Self {
        let pad = [kd / 2, kh / 2, kw / 2];
        let outer = [d + 2 * pad[0], h + 2 * pad[1], w + 2 * pad[2]];
        let idx = |z: usize, y: usize, x: usize| (z * outer[1] + y) * outer[2] + x;
        let lo = idx(pad[0], pad[1], pad[2]);
        let hi = idx(d - 1 + pad[0], h - 1 + pad[1], w - 1 + pad[2]) + 1;
        Padded {
            dims: [d, h, w],
            pad,
            outer,
            lo,
            len: hi - lo,
        }
    }

    fn plane(&self) -> usize {
        self.outer.iter().product()
    }

    /// Offset of tap `(kz, ky, kx)` relative to the output position.
    fn shift(&self, kz: usize, ky: usize, kx: usize) -> usize {
        // lo + offset is never negative because the padding equals the reach
        let [pd, ph, pw] = self.pad;
        let [_, hp, wp] = self.outer;
        let origin = (pd * hp + ph) * wp + pw;
        self.lo + (kz * hp + ky) * wp + kx - origin
    }

    /// Row start of `(z, y)` interior voxels inside a padded plane.
    fn row(&self, z: usize, y: usize) -> usize {
        let [pd, ph, pw] = self.pad;
        ((z + pd) * self.outer[1] + y + ph) * self.outer[2] + pw
    }

    /// Embeds each channel of `x` into a zero padded plane.
    fn embed(&self, x: &Tensor) -> Vec<f32> {
        let [d, h, w] = self.dims;
        let np = self.plane();
        let mut out = vec![0f32; x.channels() * np];
        for c in 0..x.channels() {
            let plane = x.channel(c);
            for z in 0..d {
                for y in 0..h {
                    let t = c * np + self.row(z, y);
                    let s = (z * h + y) * w;
                    out[t..t + w].copy_from_slice(&plane[s..s + w]);
                }
            }
        }
        out
    }

    /// Inverse of [`Padded::embed`] for buffers of `channels` rows of
    /// stride `stride` whose element 0 sits at padded index `origin`.
    fn extract(&self, buf: &[f32], channels: usize, stride: usize, origin: usize) -> Tensor {
        let [d, h, w] = self.dims;
        let mut x = Tensor::zeros([channels, d, h, w]);
        for c in 0..channels {
            let plane = x.channel_mut(c);
            for z in 0..d {
                for y in 0..h {
                    let s = c * stride + self.row(z, y) - origin;
                    let t = (z * h + y) * w;
                    plane[t..t + w].copy_from_slice(&buf[s..s + w]);
                }
            }
        }
        x
    }

    /// Embeds `g` into rows of length `len` aligned with output positions,
    /// zero at the padding positions in between.
    fn embed_outputs(&self, g: &Tensor) -> Vec<f32> {
        let [d, h, w] = self.dims;
        let mut out = vec![0f32; g.channels() * self.len];
        for c in 0..g.channels() {
            let plane = g.channel(c);
            for z in 0..d {
                for y in 0..h {
                    let t = c * self.len + self.row(z, y) - self.lo;
                    let s = (z * h + y) * w;
                    out[t..t + w].copy_from_slice(&plane[s..s + w]);
                }
            }
        }
        out
    }
}

/// 3D convolution with odd kernel `[kd, kh, kw]`, zero padding of half the
/// kernel on both sides, stride 1. A 2D convolution is `kd = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: [usize; 3],
    /// `[out, in, kd, kh, kw]`
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv {
    /// He-normal weights scaled by `gain`, zero bias.
    pub fn new(in_ch: usize, out_ch: usize, kernel: [usize; 3], gain: f32, rng: &mut Rng) -> Self {
        assert!(kernel.iter().all(|k| k % 2 == 1), "kernel must be odd");
        let fan_in = (in_ch * kernel.iter().product::<usize>()) as f32;
        let std = gain * (2.0 / fan_in).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let weight = (0..out_ch * in_ch * kernel.iter().product::<usize>())
            .map(|_| normal.sample(rng))
            .collect();
        Conv {
            in_ch,
            out_ch,
            kernel,
            weight,
            bias: vec![0.0; out_ch],
        }
    }

    fn taps(&self) -> usize {
        self.in_ch * self.kernel_volume()
    }

    fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    fn check_input(&self, x: &Tensor) {
        assert_eq!(
            x.channels(),
            self.in_ch,
            "conv expects {} input channels, got {}",
            self.in_ch,
            x.channels()
        );
    }

    /// Calls `f(tap, shift)` for every kernel offset.
    fn for_taps(&self, p: &Padded, mut f: impl FnMut(usize, usize)) {
        let [kd, kh, kw] = self.kernel;
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    f((kz * kh + ky) * kw + kx, p.shift(kz, ky, kx));
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut y = self.linear(x);
        let n = y.plane_len();
        for (o, b) in self.bias.iter().enumerate() {
            y.data_mut()[o * n..(o + 1) * n].iter_mut().for_each(|v| *v += b);
        }
        y
    }

    /// Convolution without bias.
    pub fn linear(&self, x: &Tensor) -> Tensor {
        self.check_input(x);
        let p = Padded::new(x.spatial(), self.kernel);
        let (np, len, kv) = (p.plane(), p.len, self.kernel_volume());
        let xp = p.embed(x);
        let mut y = vec![0f32; self.out_ch * len];
        self.for_taps(&p, |tap, start| {
            gemm(
                self.out_ch,
                self.in_ch,
                len,
                &self.weight[tap..],
                (self.taps(), kv),
                &xp[start..],
                (np, 1),
                1.0,
                &mut y,
                (len, 1),
            );
        });
        p.extract(&y, self.out_ch, len, p.lo)
    }

    /// Adjoint of [`Conv::linear`]: `∂L/∂x` from `∂L/∂y`.
    pub fn input_grad(&self, d_out: &Tensor) -> Tensor {
        let p = Padded::new(d_out.spatial(), self.kernel);
        let (np, len, kv) = (p.plane(), p.len, self.kernel_volume());
        let g = p.embed_outputs(d_out);
        let mut dxp = vec![0f32; self.in_ch * np];
        self.for_taps(&p, |tap, start| {
            let end = (self.in_ch - 1) * np + start + len;
            gemm(
                self.in_ch,
                self.out_ch,
                len,
                &self.weight[tap..],
                (kv, self.taps()),
                &g,
                (len, 1),
                1.0,
                &mut dxp[start..end],
                (np, 1),
            );
        });
        p.extract(&dxp, self.in_ch, np, 0)
    }

    /// Adds `∂L/∂W` (and `∂L/∂b` if given) for input `x` and upstream `d_out`.
    pub fn accumulate_param_grad(&self, x: &Tensor, d_out: &Tensor, dw: &mut [f32], db: Option<&mut [f32]>) {
        self.check_input(x);
        let p = Padded::new(x.spatial(), self.kernel);
        let (np, len, kv) = (p.plane(), p.len, self.kernel_volume());
        let xp = p.embed(x);
        let g = p.embed_outputs(d_out);
        self.for_taps(&p, |tap, start| {
            gemm(
                self.out_ch,
                len,
                self.in_ch,
                &g,
                (len, 1),
                &xp[start..],
                (1, np),
                1.0,
                &mut dw[tap..],
                (self.taps(), kv),
            );
        });
        if let Some(db) = db {
            let n = d_out.plane_len();
            for (o, g) in db.iter_mut().enumerate() {
                *g += d_out.data()[o * n..(o + 1) * n].iter().sum::<f32>();
            }
        }
    }
}

/// Transposed convolution with kernel 2 and stride 2 on every axis: each
/// input cell expands to a 2x2x2 output block.
#[derive(Clone, Debug, PartialEq)]
pub struct Upsample2 {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `[out, 2, 2, 2, in]`, i.e. rows `(out, a, b, c)` of an `(out*8) × in` matrix.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Upsample2 {
    pub fn new(in_ch: usize, out_ch: usize, gain: f32, rng: &mut Rng) -> Self {
        let std = gain * (2.0 / in_ch as f32).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        Upsample2 {
            in_ch,
            out_ch,
            weight: (0..out_ch * 8 * in_ch).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; out_ch],
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.channels(), self.in_ch);
        let [_, d, h, w] = x.shape();
        let n = d * h * w;
        let mut blocks = vec![0f32; self.out_ch * 8 * n];
        gemm(self.out_ch * 8, self.in_ch, n, &self.weight, (self.in_ch, 1), x.data(), (n, 1), 0.0, &mut blocks, (n, 1));
        let mut y = Tensor::zeros([self.out_ch, 2 * d, 2 * h, 2 * w]);
        for o in 0..self.out_ch {
            for k in 0..8 {
                let (a, b, c) = (k >> 2 & 1, k >> 1 & 1, k & 1);
                let src = &blocks[(o * 8 + k) * n..(o * 8 + k + 1) * n];
                for z in 0..d {
                    for yy in 0..h {
                        for xx in 0..w {
                            y.set(o, 2 * z + a, 2 * yy + b, 2 * xx + c, src[(z * h + yy) * w + xx] + self.bias[o]);
                        }
                    }
                }
            }
        }
        y
    }

    fn gather(&self, d_out: &Tensor, [d, h, w]: [usize; 3]) -> Vec<f32> {
        let n = d * h * w;
        let mut blocks = vec![0f32; self.out_ch * 8 * n];
        for o in 0..self.out_ch {
            for k in 0..8 {
                let (a, b, c) = (k >> 2 & 1, k >> 1 & 1, k & 1);
                let dst = &mut blocks[(o * 8 + k) * n..(o * 8 + k + 1) * n];
                for z in 0..d {
                    for yy in 0..h {
                        for xx in 0..w {
                            dst[(z * h + yy) * w + xx] = d_out.at(o, 2 * z + a, 2 * yy + b, 2 * xx + c);
                        }
                    }
                }
            }
        }
        blocks
    }

    pub fn input_grad(&self, d_out: &Tensor) -> Tensor {
        let [_, d2, h2, w2] = d_out.shape();
        let sp = [d2 / 2, h2 / 2, w2 / 2];
        let n = sp.iter().product::<usize>();
        let blocks = self.gather(d_out, sp);
        let mut dx = Tensor::zeros([self.in_ch, sp[0], sp[1], sp[2]]);
        gemm(self.in_ch, self.out_ch * 8, n, &self.weight, (1, self.in_ch), &blocks, (n, 1), 0.0, dx.data_mut(), (n, 1));
        dx
    }

    pub fn accumulate_param_grad(&self, x: &Tensor, d_out: &Tensor, dw: &mut [f32], db: &mut [f32]) {
        let sp = x.spatial();
        let n = x.plane_len();
        let blocks = self.gather(d_out, sp);
        gemm(self.out_ch * 8, n, self.in_ch, &blocks, (n, 1), x.data(), (1, n), 1.0, dw, (self.in_ch, 1));
        for (o, g) in db.iter_mut().enumerate() {
            *g += blocks[o * 8 * n..(o + 1) * 8 * n].iter().sum::<f32>();
        }
    }
}

/// Uniform `[-1, 1)` tensor, for tests and probes.
pub fn uniform_tensor(shape: [usize; 4], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    /// Direct convolution by definition.
    fn naive_conv(conv: &Conv, x: &Tensor) -> Tensor {
        let [ci, d, h, w] = x.shape();
        let [kd, kh, kw] = conv.kernel;
        Tensor::from_fn([conv.out_ch, d, h, w], |o, z, y, xx| {
            let mut acc = conv.bias[o] as f64;
            for c in 0..ci {
                for a in 0..kd {
                    for b in 0..kh {
                        for e in 0..kw {
                            let (sz, sy, sx) = (
                                z as isize + a as isize - (kd / 2) as isize,
                                y as isize + b as isize - (kh / 2) as isize,
                                xx as isize + e as isize - (kw / 2) as isize,
                            );
                            if sz < 0 || sy < 0 || sx < 0 || sz >= d as isize || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            let wi = (((o * ci + c) * kd + a) * kh + b) * kw + e;
                            acc += conv.weight[wi] as f64 * x.at(c, sz as usize, sy as usize, sx as usize) as f64;
                        }
                    }
                }
            }
            acc as f32
        })
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(&x, &y)| x as f64 * y as f64).sum()
    }

    #[test]
    fn gemm_conv_matches_definition() {
        let mut rng = rng_from_seed(1);
        for (kernel, shape) in [([3, 3, 3], [2, 4, 5, 3]), ([1, 3, 3], [3, 1, 6, 7]), ([3, 3, 3], [1, 2, 2, 2])] {
            let mut conv = Conv::new(shape[0], 4, kernel, 1.0, &mut rng);
            conv.bias = vec![0.1, -0.2, 0.3, 0.0];
            let x = uniform_tensor(shape, &mut rng);
            let fast = conv.forward(&x);
            let slow = naive_conv(&conv, &x);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_adjoints() {
        let mut rng = rng_from_seed(2);
        for (kernel, sp) in [([3, 3, 3], [3, 4, 5]), ([1, 3, 3], [1, 6, 4]), ([3, 3, 3], [1, 1, 2]), ([3, 1, 5], [4, 2, 3])] {
            conv_adjoint_case(Conv::new(3, 2, kernel, 1.0, &mut rng), sp, &mut rng);
        }
    }

    fn conv_adjoint_case(conv: Conv, [d, h, w]: [usize; 3], rng: &mut Rng) {
        let x = uniform_tensor([3, d, h, w], rng);
        let g = uniform_tensor([2, d, h, w], rng);
        // <C x, g> == <x, Cᵀ g>
        let lhs = dot(&conv.linear(&x), &g);
        let rhs = dot(&x, &conv.input_grad(&g));
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0));
        // <C(W) x, g> is linear in W, so <dW, W> reproduces it
        let mut dw = vec![0f32; conv.weight.len()];
        let mut db = vec![0f32; 2];
        conv.accumulate_param_grad(&x, &g, &mut dw, Some(&mut db));
        let via_w: f64 = dw.iter().zip(&conv.weight).map(|(&a, &b)| a as f64 * b as f64).sum();
        assert!((via_w - lhs).abs() < 1e-3 * lhs.abs().max(1.0));
        let sum_g0: f32 = g.channel(0).iter().sum();
        assert!((db[0] - sum_g0).abs() < 1e-4);
    }

    #[test]
    fn upsample2_shapes_and_adjoint() {
        let mut rng = rng_from_seed(3);
        let up = Upsample2::new(3, 2, 1.0, &mut rng);
        let x = uniform_tensor([3, 2, 3, 2], &mut rng);
        let y = up.forward(&x);
        assert_eq!(y.shape(), [2, 4, 6, 4]);
        // one block by hand
        let (o, k) = (1, 5); // a=1, b=0, c=1
        let expected: f32 = (0..3).map(|i| up.weight[(o * 8 + k) * 3 + i] * x.at(i, 1, 2, 0)).sum();
        assert!((y.at(o, 3, 4, 1) - expected).abs() < 1e-5);

        let g = uniform_tensor(y.shape(), &mut rng);
        let lhs = dot(&y, &g) - (0..2).map(|o| up.bias[o] as f64 * g.channel(o).iter().map(|&v| v as f64).sum::<f64>()).sum::<f64>();
        let rhs = dot(&x, &up.input_grad(&g));
        assert!((lhs - rhs).abs() < 1e-3);
        let mut dw = vec![0f32; up.weight.len()];
        let mut db = vec![0f32; 2];
        up.accumulate_param_grad(&x, &g, &mut dw, &mut db);
        let via_w: f64 = dw.iter().zip(&up.weight).map(|(&a, &b)| a as f64 * b as f64).sum();
        assert!((via_w - lhs).abs() < 1e-3);
    }
}
