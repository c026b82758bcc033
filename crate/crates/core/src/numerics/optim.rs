use std::f64::consts::PI;

use super::{ParamStore, Tensor};
use crate::{Error, Result};

/// Linear warmup followed by cosine decay to zero. Steps are 1-based.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_ratio: f64, total_steps: usize) -> Self {
        let warmup_steps = (warmup_ratio * total_steps as f64).floor() as usize;
        Self { peak, warmup_steps, total_steps }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let w = self.warmup_steps;
        if w > 0 && step <= w {
            return self.peak * step as f64 / w as f64;
        }
        if self.total_steps <= w {
            return self.peak;
        }
        let progress = ((step - w.min(step)) as f64 / (self.total_steps - w) as f64).min(1.0);
        self.peak * 0.5 * (1.0 + (PI * progress).cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// AdamW with decoupled weight decay and a scheduled learning rate.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub schedule: LrSchedule,
    /// Number of updates applied so far.
    pub step: usize,
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, schedule: LrSchedule) -> Self {
        Self { config, schedule, step: 0, moments: Vec::new() }
    }

    /// Applies one update to every trainable parameter and returns the
    /// learning rate used. Frozen parameters are not touched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<f64> {
        if let Some((_, p)) = store.iter().find(|(_, p)| p.trainable && p.grad.is_none()) {
            return Err(Error::MissingGrad(p.name.clone()));
        }
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        self.step += 1;
        let t = self.step as i32;
        let lr = self.schedule.lr(self.step);
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (slot, p) in self.moments.iter_mut().zip(store.iter_mut()) {
            if !p.trainable {
                continue;
            }
            let g = p.grad.as_ref().expect("checked above");
            g.ensure_finite("adamw gradient")?;
            let (m, v) = slot.get_or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w -= lr * (mhat / (vhat.sqrt() + eps) + weight_decay * *w);
            }
        }
        Ok(lr)
    }
}

/// Free-function form of [`AdamW::step`].
pub fn adamw_step(state: &mut AdamW, params: &mut ParamStore) -> Result<f64> {
    state.step(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(v));
        s
    }

    #[test]
    fn schedule_boundaries() {
        let s = LrSchedule::new(2e-4, 0.01, 1000);
        assert_eq!(s.warmup_steps, 10);
        assert!((s.lr(1) - 2e-4 / 10.0).abs() < 1e-18);
        assert!((s.lr(10) - 2e-4).abs() < 1e-12);
        assert!(s.lr(1000) <= 1e-9 * 2e-4);
        assert!(s.lr(500) < s.lr(100));
    }

    #[test]
    fn schedule_without_warmup() {
        let s = LrSchedule::new(1.0, 0.01, 50);
        assert_eq!(s.warmup_steps, 0);
        assert!((s.lr(0) - 1.0).abs() < 1e-12);
        assert!(s.lr(50) < 1e-9);
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut store = scalar_store(0.75);
        store.zero_grad();
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(cfg, LrSchedule::new(1e-2, 0.0, 10));
        opt.step(&mut store).unwrap();
        assert_eq!(store.value(super::super::ParamId(0)).item(), 0.75);
    }

    #[test]
    fn moves_against_gradient() {
        let mut store = scalar_store(0.5);
        store.zero_grad();
        store.iter_mut().next().unwrap().grad = Some(Tensor::scalar(1.0));
        let mut opt = AdamW::new(AdamWConfig::default(), LrSchedule::new(1e-2, 0.0, 10));
        opt.step(&mut store).unwrap();
        assert!(store.value(super::super::ParamId(0)).item() < 0.5);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = scalar_store(0.5);
        let mut opt = AdamW::new(AdamWConfig::default(), LrSchedule::new(1e-2, 0.0, 10));
        assert!(matches!(opt.step(&mut store), Err(Error::MissingGrad(_))));
    }

    #[test]
    fn frozen_parameter_untouched() {
        let mut store = scalar_store(0.5);
        store.add("y", Tensor::scalar(0.25));
        store.set_trainable_patterns(&["x".into()]);
        store.zero_grad();
        store.iter_mut().next().unwrap().grad = Some(Tensor::scalar(1.0));
        let mut opt = AdamW::new(AdamWConfig::default(), LrSchedule::new(1e-1, 0.0, 10));
        opt.step(&mut store).unwrap();
        assert_eq!(store.value(super::super::ParamId(1)).item().to_bits(), 0.25f64.to_bits());
    }

    #[test]
    fn three_steps_match_scalar_oracle() {
        let grads = [0.3, -1.2, 0.05];
        let (b1, b2, eps, wd) = (0.9f64, 0.999f64, 1e-8, 0.01);
        let sched = LrSchedule::new(1e-2, 0.0, 3);
        let (mut x, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            let lr = sched.lr(i + 1);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * (mh / (vh.sqrt() + eps) + wd * x);
        }

        let mut store = scalar_store(0.5);
        let mut opt = AdamW::new(AdamWConfig::default(), sched);
        for g in grads {
            store.iter_mut().next().unwrap().grad = Some(Tensor::scalar(g));
            opt.step(&mut store).unwrap();
        }
        let got = store.value(super::super::ParamId(0)).item();
        assert!((got - x).abs() < 1e-12, "{got} vs {x}");
    }
}
