use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::Mat;
use crate::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// AdamW with bias-corrected moments and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW { config, m: Vec::new(), v: Vec::new(), step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moment estimates of a parameter that has been updated.
    pub fn moments(&self, id: ParamId) -> Option<(&Mat, &Mat)> {
        match (self.m.get(id.index()), self.v.get(id.index())) {
            (Some(Some(m)), Some(Some(v))) => Some((m, v)),
            _ => None,
        }
    }

    /// Replaces the step count and moment estimates, e.g. when resuming.
    pub fn restore(&mut self, steps: u64, moments: Vec<(ParamId, Mat, Mat)>) {
        self.step = steps;
        self.m.clear();
        self.v.clear();
        for (id, m, v) in moments {
            let i = id.index();
            if self.m.len() <= i {
                self.m.resize(i + 1, None);
                self.v.resize(i + 1, None);
            }
            self.m[i] = Some(m);
            self.v[i] = Some(v);
        }
    }

    /// Applies one update at learning rate `lr` to every parameter that has a
    /// gradient. The step is rejected, leaving all state untouched, if any
    /// gradient is non-finite or targets a frozen parameter.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) -> Result<()> {
        for (id, g) in grads.iter() {
            let p = store.get(id);
            if p.frozen {
                return Err(NnError::FrozenParameter(p.name.clone()));
            }
            if !g.is_finite() {
                return Err(NnError::NonFiniteGradient(p.name.clone()));
            }
            if g.shape() != p.value.shape() {
                return Err(NnError::Shape(format!("gradient {:?} for {} {:?}", g.shape(), p.name, p.value.shape())));
            }
        }
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        self.step += 1;
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in grads.iter() {
            let i = id.index();
            let m = self.m[i].get_or_insert_with(|| Mat::zeros(g.rows(), g.cols()));
            let v = self.v[i].get_or_insert_with(|| Mat::zeros(g.rows(), g.cols()));
            let theta = store.value_mut(id);
            for (((t, &gi), mi), vi) in theta.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *t -= lr * (mhat / (vhat.sqrt() + eps) + weight_decay * *t);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Number of warmup iterations: `ceil(frac * total)`.
pub fn warmup_iters(total: u64, frac: f64) -> u64 {
    // The small offset keeps products like 0.05 * 100 from rounding up to 6.
    ((frac * total as f64) - 1e-9).ceil().max(0.0) as u64
}

/// Linear warmup from 0 to `peak` over [`warmup_iters`], constant afterwards.
pub fn warmup_lr(iter: u64, total: u64, peak: f64, frac: f64) -> f64 {
    let w = warmup_iters(total, frac);
    if iter >= w {
        peak
    } else {
        peak * iter as f64 / w as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Init, ParamStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn no_decay() -> AdamWConfig {
        AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() }
    }

    #[test]
    fn first_step_bias_correction() {
        let mut store = ParamStore::new();
        let id = store.add("p", Mat::filled(1, 3, 0.5));
        let mut grads = Grads::new(1);
        grads.accumulate(id, &Mat::filled(1, 3, 1.0));
        let mut opt = AdamW::new(no_decay());
        let lr = 1e-3;
        opt.step(&mut store, &grads, lr).unwrap();
        let m = opt.m[0].as_ref().unwrap();
        let v = opt.v[0].as_ref().unwrap();
        assert!((m.get(0, 0) - 0.1).abs() < 1e-15);
        assert!((v.get(0, 0) - 0.05).abs() < 1e-15);
        let expected = 0.5 - lr * 1.0 / (1.0 + 1e-8);
        assert!((store.value(id).get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut store = ParamStore::new();
        let id = store.add("p", Mat::from_vec(1, 2, vec![0.3, -0.7]));
        let mut grads = Grads::new(1);
        grads.accumulate(id, &Mat::zeros(1, 2));
        let mut opt = AdamW::new(no_decay());
        for _ in 0..5 {
            opt.step(&mut store, &grads, 0.1).unwrap();
        }
        assert_eq!(store.value(id).data(), &[0.3, -0.7]);
    }

    #[test]
    fn matches_textbook_reference_over_100_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let id = store.add_init("p", 2, 3, Init::Normal(1.0), &mut rng);
        let cfg = AdamWConfig { weight_decay: 0.05, ..AdamWConfig::default() };
        let mut opt = AdamW::new(cfg);
        let mut theta = store.value(id).data().to_vec();
        let (mut m, mut v) = (vec![0.0; 6], vec![0.0; 6]);
        for t in 1..=100 {
            let g: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lr = 1e-2 * (1.0 + (t % 7) as f64) / 7.0;
            let mut grads = Grads::new(1);
            grads.accumulate(id, &Mat::from_vec(2, 3, g.clone()));
            opt.step(&mut store, &grads, lr).unwrap();
            for k in 0..6 {
                m[k] = 0.9 * m[k] + 0.1 * g[k];
                v[k] = 0.95 * v[k] + 0.05 * g[k] * g[k];
                let mhat = m[k] / (1.0 - 0.9f64.powi(t));
                let vhat = v[k] / (1.0 - 0.95f64.powi(t));
                theta[k] = theta[k] - lr * 0.05 * theta[k] - lr * mhat / (vhat.sqrt() + 1e-8);
            }
        }
        for (a, b) in store.value(id).data().iter().zip(&theta) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_non_finite_and_frozen() {
        let mut store = ParamStore::new();
        let a = store.add("und.a", Mat::zeros(1, 1));
        let b = store.add("tex.b", Mat::zeros(1, 1));
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut grads = Grads::new(2);
        grads.accumulate(b, &Mat::scalar(f64::NAN));
        assert!(matches!(opt.step(&mut store, &grads, 0.1), Err(NnError::NonFiniteGradient(_))));
        assert_eq!(opt.steps(), 0);
        store.set_frozen("und.", true);
        let mut grads = Grads::new(2);
        grads.accumulate(a, &Mat::scalar(1.0));
        assert!(matches!(opt.step(&mut store, &grads, 0.1), Err(NnError::FrozenParameter(_))));
    }

    #[test]
    fn warmup_schedule() {
        assert_eq!(warmup_iters(100, 0.05), 5);
        assert_eq!(warmup_iters(2000, 0.05), 100);
        assert_eq!(warmup_iters(30, 0.05), 2);
        assert_eq!(warmup_lr(0, 100, 1e-5, 0.05), 0.0);
        assert_eq!(warmup_lr(5, 100, 1e-5, 0.05), 1e-5);
        assert_eq!(warmup_lr(100, 100, 1e-5, 0.05), 1e-5);
        assert!((warmup_lr(2, 100, 1e-5, 0.05) - 4e-6).abs() < 1e-20);
        for total in 1..500u64 {
            let w = warmup_iters(total, 0.05);
            assert_eq!(w, (total * 5).div_ceil(100), "total {total}");
        }
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut store = ParamStore::new();
        let id = store.add("p", Mat::zeros(1, 2));
        let mut grads = Grads::new(1);
        grads.accumulate(id, &Mat::from_vec(1, 2, vec![3.0, 4.0]));
        assert_eq!(clip_grad_norm(&mut grads, 1.0), 5.0);
        assert!((grads.global_norm() - 1.0).abs() < 1e-15);
        let _ = store;
    }
}
