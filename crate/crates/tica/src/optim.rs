//! Adam / AdamW with bias correction and scoped updates.

use ndarray::ArrayD;

use crate::elem::Elem;
use crate::model::params::{ParamEntry, ParamGroup, ParamStore};

/// Which parameters a step is allowed to touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateScope {
    All,
    /// Encoder-group parameters only.
    Encoder,
    /// Normalization affine parameters (gamma/beta) only.
    NormAffine,
}

impl UpdateScope {
    pub fn contains<F: Elem>(self, entry: &ParamEntry<F>) -> bool {
        match self {
            UpdateScope::All => true,
            UpdateScope::Encoder => entry.group == ParamGroup::Encoder,
            UpdateScope::NormAffine => entry.norm_affine,
        }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Decoupled weight decay (AdamW) instead of L2-in-gradient (Adam).
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decoupled: false,
        }
    }
}

impl AdamConfig {
    pub fn adam(lr: f64) -> Self {
        AdamConfig { lr, ..AdamConfig::default() }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        AdamConfig { lr, weight_decay, decoupled: true, ..AdamConfig::default() }
    }
}

/// Optimizer state: first/second moment buffers aligned with the store.
#[derive(Clone, Debug)]
pub struct Adam<F: Elem> {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
}

impl<F: Elem> Adam<F> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<F>) -> Self {
        let m = store.iter().map(|e| ArrayD::zeros(e.value.raw_dim())).collect();
        let v = store.iter().map(|e| ArrayD::zeros(e.value.raw_dim())).collect();
        Adam { cfg, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over the gradients currently in the store, restricted to
    /// `scope`. `lr` overrides the configured learning rate (for schedules).
    pub fn step(&mut self, store: &mut ParamStore<F>, scope: UpdateScope, lr: Option<f64>) {
        self.step += 1;
        let lr = lr.unwrap_or(self.cfg.lr);
        let t = self.step as i32;
        let bias1 = 1.0 - self.cfg.beta1.powi(t);
        let bias2 = 1.0 - self.cfg.beta2.powi(t);
        let b1 = F::of(self.cfg.beta1);
        let b2 = F::of(self.cfg.beta2);
        let one_m_b1 = F::of(1.0 - self.cfg.beta1);
        let one_m_b2 = F::of(1.0 - self.cfg.beta2);
        let eps = F::of(self.cfg.eps);
        let lr_f = F::of(lr);
        let inv_bias1 = F::of(1.0 / bias1);
        let inv_bias2 = F::of(1.0 / bias2);
        let wd = self.cfg.weight_decay;

        for (i, entry) in store.iter_mut().enumerate() {
            if !scope.contains(entry) {
                continue;
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            if wd > 0.0 && !self.cfg.decoupled {
                // classic Adam L2: fold decay into the gradient
                let wdf = F::of(wd);
                ndarray::Zip::from(&mut entry.grad)
                    .and(&entry.value)
                    .for_each(|g, &p| *g = *g + wdf * p);
            }
            ndarray::Zip::from(&mut *m).and(&entry.grad).for_each(|m, &g| {
                *m = b1 * *m + one_m_b1 * g;
            });
            ndarray::Zip::from(&mut *v).and(&entry.grad).for_each(|v, &g| {
                *v = b2 * *v + one_m_b2 * g * g;
            });
            if wd > 0.0 && self.cfg.decoupled {
                let decay = F::of(1.0 - lr * wd);
                entry.value.mapv_inplace(|p| p * decay);
            }
            ndarray::Zip::from(&mut entry.value)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let m_hat = m * inv_bias1;
                    let v_hat = v * inv_bias2;
                    *p = *p - lr_f * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}

/// Cosine decay from `base` to 0 over `total` steps.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let progress = (step.min(total)) as f64 / total as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    fn store_with(values: &[(&str, ParamGroup, bool, f64)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for &(name, group, na, v) in values {
            s.add(name, group, na, ArrayD::from_elem(ndarray::IxDyn(&[2]), v));
        }
        s
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // one parameter, constant gradient g: after one step,
        // p -= lr * m_hat / (sqrt(v_hat) + eps) with m_hat = g, v_hat = g^2
        let mut store = store_with(&[("w", ParamGroup::Encoder, false, 1.0)]);
        for e in store.iter_mut() {
            e.grad.fill(0.5);
        }
        let mut opt = Adam::new(AdamConfig::adam(0.1), &store);
        opt.step(&mut store, UpdateScope::All, None);
        let expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        let got = store.by_name("w").unwrap().value[[0]];
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn scope_filters_updates() {
        let mut store = store_with(&[
            ("enc.w", ParamGroup::Encoder, false, 1.0),
            ("dec.w", ParamGroup::Decoder, false, 1.0),
            ("enc.bn.gamma", ParamGroup::Encoder, true, 1.0),
        ]);
        for e in store.iter_mut() {
            e.grad.fill(1.0);
        }
        let mut opt = Adam::new(AdamConfig::adam(0.01), &store);
        opt.step(&mut store, UpdateScope::Encoder, None);
        assert!(store.by_name("enc.w").unwrap().value[[0]] < 1.0);
        assert!(store.by_name("enc.bn.gamma").unwrap().value[[0]] < 1.0);
        assert_eq!(store.by_name("dec.w").unwrap().value[[0]], 1.0);

        let mut store2 = store_with(&[
            ("enc.w", ParamGroup::Encoder, false, 1.0),
            ("enc.bn.gamma", ParamGroup::Encoder, true, 1.0),
        ]);
        for e in store2.iter_mut() {
            e.grad.fill(1.0);
        }
        let mut opt2 = Adam::new(AdamConfig::adam(0.01), &store2);
        opt2.step(&mut store2, UpdateScope::NormAffine, None);
        assert_eq!(store2.by_name("enc.w").unwrap().value[[0]], 1.0);
        assert!(store2.by_name("enc.bn.gamma").unwrap().value[[0]] < 1.0);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut store = store_with(&[("w", ParamGroup::Encoder, false, 0.7)]);
        for e in store.iter_mut() {
            e.grad.fill(3.0);
        }
        let mut opt = Adam::new(AdamConfig::adam(0.0), &store);
        for _ in 0..5 {
            opt.step(&mut store, UpdateScope::All, None);
        }
        assert_eq!(store.by_name("w").unwrap().value[[0]], 0.7);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(1.0, 0, 100), 1.0);
        assert!((cosine_lr(1.0, 50, 100) - 0.5).abs() < 1e-12);
        assert!(cosine_lr(1.0, 100, 100) < 1e-12);
        assert!(cosine_lr(1.0, 200, 100) < 1e-12);
    }

    #[test]
    fn adamw_decay_shrinks_weights_without_gradient() {
        let mut store = store_with(&[("w", ParamGroup::Encoder, false, 2.0)]);
        // zero gradient: decoupled decay still shrinks the weight
        let mut opt = Adam::new(AdamConfig::adamw(0.1, 0.5), &store);
        opt.step(&mut store, UpdateScope::All, None);
        let got = store.by_name("w").unwrap().value[[0]];
        assert!((got - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }
}
