use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        AdamConfig {
            lr,
            beta1,
            beta2,
            eps: default_eps(),
        }
    }
}

/// Bias-corrected Adam over a list of parameter buffers.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Adam {
            cfg,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every buffer in `params` from the matching `grads`.
    pub fn step<P, G>(&mut self, params: &mut [P], grads: &[G])
    where
        P: AsMut<[f32]>,
        G: AsRef<[f32]>,
    {
        assert_eq!(params.len(), self.m.len(), "parameter list changed");
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (p, g) = (p.as_mut(), g.as_ref());
            assert_eq!(p.len(), g.len());
            for j in 0..p.len() {
                let gj = g[j] as f64;
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = beta1 * *m + (1.0 - beta1) * gj;
                *v = beta2 * *v + (1.0 - beta2) * gj * gj;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                p[j] = (p[j] as f64 - update) as f32;
            }
        }
    }

    /// Same as [`Adam::step`] for a single `f64`-gradient buffer.
    pub fn step_flat(&mut self, params: &mut [f32], grads: &[f64]) {
        assert_eq!(self.m.len(), 1);
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let (m, v) = (&mut self.m[0], &mut self.v[0]);
        for j in 0..params.len() {
            let g = grads[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
            params[j] = (params[j] as f64 - lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps)) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.9, 0.999), [2]);
        let mut p = vec![vec![1.0f32, -1.0]];
        adam.step(&mut p, &[vec![3.0f32, -0.5]]);
        assert!((p[0][0] - 0.9).abs() < 1e-6);
        assert!((p[0][1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::new(AdamConfig::new(0.05, 0.9, 0.999), [1]);
        let mut x = vec![4.0f32];
        for _ in 0..2000 {
            let g = vec![2.0 * (x[0] as f64 - 1.0)];
            adam.step_flat(&mut x, &g);
        }
        assert!((x[0] - 1.0).abs() < 1e-2);
    }
}
