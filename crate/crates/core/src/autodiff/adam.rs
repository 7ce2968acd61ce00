use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Moments decay geometrically once a gradient vanishes; subnormal floats
/// are orders of magnitude slower to operate on, so they become zero.
fn flush_subnormal(x: f32) -> f32 {
    if x.abs() < f32::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

/// Adam with bias correction. One instance owns the moments of every
/// parameter it has updated; the step counter is shared across them.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Vec<f32>>,
    second: BTreeMap<String, Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f32]> {
        self.first.get(name).map(|v| v.as_slice())
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f32]> {
        self.second.get(name).map(|v| v.as_slice())
    }

    pub fn tracked(&self) -> impl Iterator<Item = &String> {
        self.first.keys()
    }

    pub(crate) fn restore(&mut self, step: u64, name: String, first: Vec<f32>, second: Vec<f32>) {
        self.step = step;
        self.first.insert(name.clone(), first);
        self.second.insert(name, second);
    }

    pub(crate) fn set_steps(&mut self, step: u64) {
        self.step = step;
    }

    /// Applies one update. Gradients of frozen parameters are ignored. The
    /// store is left untouched if any gradient is non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
            let p = params
                .get(name)
                .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if p.shape() != g.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - (beta1 as f64).powi(t);
        let bc2 = 1.0 - (beta2 as f64).powi(t);
        let step_size = (lr as f64 / bc1) as f32;
        let inv_sqrt_bc2 = (1.0 / bc2.sqrt()) as f32;

        for (name, g) in grads {
            if params.is_frozen(name) {
                continue;
            }
            let n = g.numel();
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let p = params.get_mut(name).expect("checked above").data_mut();
            for (((p, &gi), m), v) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = flush_subnormal(beta1 * *m + (1.0 - beta1) * gi);
                *v = flush_subnormal(beta2 * *v + (1.0 - beta2) * gi * gi);
                *p -= step_size * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f32) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("net.w", Tensor::from_vec(vec![v; 3]));
        s
    }

    fn grads(v: f32) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("net.w".to_string(), Tensor::from_vec(vec![v; 3]))])
    }

    #[test]
    fn zero_gradient_only_advances_the_counter() {
        let mut p = store(0.5);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut p, &grads(0.0)).unwrap();
        assert_eq!(p, store(0.5));
        assert_eq!(adam.steps(), 1);
        assert_eq!(adam.first_moment("net.w").unwrap(), &[0.0; 3]);
        assert_eq!(adam.second_moment("net.w").unwrap(), &[0.0; 3]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m = 0.1, v = 0.001; bias-corrected m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let mut p = store(1.0);
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        adam.step(&mut p, &grads(1.0)).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        for &v in p.get("net.w").unwrap().data() {
            assert!((v as f64 - expected).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut p = store(1.0);
        let mut adam = Adam::new(AdamConfig::default());
        let err = adam.step(&mut p, &grads(f32::NAN)).unwrap_err();
        assert!(err.to_string().contains("net.w"), "{err}");
        assert_eq!(adam.steps(), 0);
        assert_eq!(p, store(1.0));
    }

    #[test]
    fn frozen_parameters_never_move() {
        let mut p = store(1.0);
        p.freeze("net");
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut p, &grads(1.0)).unwrap();
        assert_eq!(p.get("net.w").unwrap().data(), &[1.0; 3]);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = store(0.3);
            let mut adam = Adam::new(AdamConfig::default());
            for k in 0..50 {
                adam.step(&mut p, &grads((k as f32 * 0.37).sin())).unwrap();
            }
            p.get("net.w").unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
