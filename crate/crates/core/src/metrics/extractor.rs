use nalgebra::{DMatrix, DVector};

use crate::image::Image;
use crate::nn::{Conv, Layer, Sequential};
use crate::seed::rng_from_seed;

/// Seed of the default random extractor's weights.
pub const RANDOM_V1_SEED: u64 = 20_230_401;
pub const RANDOM_V1_WIDTH: usize = 64;

/// Fixed convolutional map from an RGB image to one feature vector per
/// pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    name: String,
    net: Sequential,
    dim: usize,
}

impl FeatureExtractor {
    /// Two 3x3 convolutions of width 64 with a leaky ReLU between them,
    /// weights drawn from [`RANDOM_V1_SEED`].
    pub fn random_v1() -> Self {
        let mut rng = rng_from_seed(RANDOM_V1_SEED);
        let w = RANDOM_V1_WIDTH;
        let net = Sequential::new(vec![
            Layer::Conv(Conv::new(3, w, [1, 3, 3], 1.0, &mut rng)),
            Layer::LeakyRelu(0.2),
            Layer::Conv(Conv::new(w, w, [1, 3, 3], 1.0, &mut rng)),
        ]);
        FeatureExtractor {
            name: "random-v1".into(),
            net,
            dim: w,
        }
    }

    /// A user-supplied network taking `[3, 1, h, w]` inputs to `dim` channels.
    pub fn custom(net: Sequential, dim: usize) -> Self {
        FeatureExtractor {
            name: "custom".into(),
            net,
            dim,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mean and sample covariance (divisor `N − 1`) of the features over the
    /// pixels of `img`.
    pub fn statistics(&self, img: &Image) -> (DVector<f64>, DMatrix<f64>) {
        let f = self.net.forward(&img.to_tensor());
        let n = f.plane_len();
        let d = f.channels();
        let x = DMatrix::from_fn(d, n, |c, i| f.channel(c)[i] as f64);
        let mu = x.column_mean();
        let centered = DMatrix::from_fn(d, n, |c, i| x[(c, i)] - mu[c]);
        let cov = &centered * centered.transpose() / (n.max(2) - 1) as f64;
        (mu, cov)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let img = Image::from_vec(5, 4, (0..60).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        let a = FeatureExtractor::random_v1();
        let (mu, cov) = a.statistics(&img);
        assert_eq!(mu.len(), 64);
        assert_eq!(cov.shape(), (64, 64));
        assert_eq!(FeatureExtractor::random_v1().statistics(&img), (mu, cov.clone()));
        assert!((&cov - cov.transpose()).amax() < 1e-9);
    }

    #[test]
    fn covariance_uses_sample_divisor() {
        // identity 1x1 extractor: statistics are those of the red channel
        let mut conv = Conv::new(3, 1, [1, 1, 1], 1.0, &mut rng_from_seed(0));
        conv.weight = vec![1.0, 0.0, 0.0];
        let ex = FeatureExtractor::custom(Sequential::new(vec![Layer::Conv(conv)]), 1);
        let img = Image::from_vec(3, 1, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        let (mu, cov) = ex.statistics(&img);
        assert!((mu[0] - 1.0).abs() < 1e-12);
        assert!((cov[(0, 0)] - 1.0).abs() < 1e-12);
    }
}
