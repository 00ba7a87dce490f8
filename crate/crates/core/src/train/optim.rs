//! Adam with inverse-square-root warmup and global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Learning rate reached at the end of warmup.
    pub peak_lr: f64,
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            peak_lr: 1e-3,
            warmup: 4000,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            clip_norm: 5.0,
        }
    }
}

impl OptimConfig {
    pub fn desk() -> Self {
        OptimConfig {
            peak_lr: 3e-3,
            warmup: 100,
            ..OptimConfig::default()
        }
    }

    /// `peak · min(step / warmup, √(warmup / step))` for 1-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup.max(1) as f64;
        self.peak_lr * (s / w).min((w / s).sqrt())
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Scales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: usize,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// One update with the scheduled learning rate. Returns the rate used.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor], cfg: &OptimConfig) -> f64 {
        self.step += 1;
        let lr = cfg.lr_at(self.step);
        self.apply(params, grads, cfg, lr);
        lr
    }

    /// One update with an explicit learning rate.
    pub fn apply(&mut self, params: &mut ParamStore, grads: &[Tensor], cfg: &OptimConfig, lr: f64) {
        let t = self.step.max(1) as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let i = id.index();
            let p = params.get_mut(id).data_mut();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((p, g), m), v) in p.iter_mut().zip(grads[i].data()).zip(m).zip(v) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_peaks_at_the_end_of_warmup() {
        let cfg = OptimConfig {
            peak_lr: 1.0,
            warmup: 100,
            ..OptimConfig::default()
        };
        assert!((cfg.lr_at(50) - 0.5).abs() < 1e-12);
        assert!((cfg.lr_at(100) - 1.0).abs() < 1e-12);
        assert!((cfg.lr_at(400) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = vec![Tensor::row_vector(vec![3.0, 0.0]), Tensor::row_vector(vec![4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        let mut small = vec![Tensor::row_vector(vec![0.3])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.3]);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let mut s = ParamStore::new();
        let mut r = crate::rng::stream(1, "test");
        s.uniform("w", &[3, 4], 1.0, &mut r).unwrap();
        let before = s.clone();
        let mut adam = Adam::new(&s);
        let grads = vec![Tensor::filled(&[3, 4], -0.7)];
        let cfg = OptimConfig {
            peak_lr: 0.0,
            ..OptimConfig::default()
        };
        adam.update(&mut s, &grads, &cfg);
        for ((_, a), (_, b)) in s.iter().zip(before.iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut s = ParamStore::new();
        let id = s.insert("x", Tensor::row_vector(vec![2.0, -3.0])).unwrap();
        let mut adam = Adam::new(&s);
        let cfg = OptimConfig {
            peak_lr: 0.1,
            warmup: 1,
            clip_norm: 0.0,
            ..OptimConfig::default()
        };
        for _ in 0..500 {
            let g = Tensor::row_vector(s.get(id).data().iter().map(|x| 2.0 * x).collect());
            adam.update(&mut s, &[g], &cfg);
        }
        assert!(s.get(id).data().iter().all(|x| x.abs() < 0.05));
    }
}
