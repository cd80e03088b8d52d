use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{NdArray, ParamId, ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: NdArray<T>,
    pub v: NdArray<T>,
    pub step: u64,
}

/// Adam with bias correction. Moments are keyed by parameter name so they
/// survive checkpointing.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    state: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: BTreeMap::new(),
        }
    }

    pub fn moments(&self) -> &BTreeMap<String, Moments<T>> {
        &self.state
    }

    pub fn set_moments(&mut self, name: &str, moments: Moments<T>) {
        self.state.insert(name.to_string(), moments);
    }

    /// One update of `ids` from their accumulated gradients. Nothing is
    /// modified when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, ids: &[ParamId]) -> Result<()> {
        for &id in ids {
            let p = store.get(id);
            if !p.grad.is_finite() {
                return Err(Error::Diverged(format!("non-finite gradient for '{}'", p.name)));
            }
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
        let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - beta1), T::from_f64_lossy(1.0 - beta2));
        let eps_t = T::from_f64_lossy(eps);
        for &id in ids {
            let p = store.get_mut(id);
            let st = self.state.entry(p.name.clone()).or_insert_with(|| Moments {
                m: NdArray::zeros(p.value.shape()),
                v: NdArray::zeros(p.value.shape()),
                step: 0,
            });
            st.step += 1;
            let t = st.step as i32;
            let c1 = T::from_f64_lossy(1.0 / (1.0 - beta1.powi(t)));
            let c2 = T::from_f64_lossy(1.0 / (1.0 - beta2.powi(t)));
            let lr_t = T::from_f64_lossy(lr);
            let g = p.grad.data();
            let w = p.value.data_mut();
            let m = st.m.data_mut();
            let v = st.v.data_mut();
            for i in 0..w.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let mhat = m[i] * c1;
                let vhat = v[i] * c2;
                w[i] -= lr_t * mhat / (vhat.sqrt() + eps_t);
            }
        }
        Ok(())
    }
}
