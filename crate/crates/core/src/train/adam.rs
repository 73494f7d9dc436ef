//! Bias-corrected Adam over the trainable part of a [`ParamStore`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    /// Number of steps taken.
    pub t: u64,
    moments: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments for every parameter of `store` that is not frozen.
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let moments = store
            .trainable()
            .map(|(name, p)| {
                let z = Tensor::zeros(p.value.shape());
                (
                    name.to_string(),
                    Moments {
                        m: z.clone(),
                        v: z,
                    },
                )
            })
            .collect();
        AdamState {
            config,
            t: 0,
            moments,
        }
    }

    pub fn from_parts(config: AdamConfig, t: u64, moments: BTreeMap<String, Moments<T>>) -> Self {
        AdamState { config, t, moments }
    }

    pub fn moments(&self) -> impl Iterator<Item = (&str, &Moments<T>)> {
        self.moments.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// One update of every trainable parameter.
    ///
    /// `grads` must name exactly the trainable parameters: a missing entry, an
    /// entry for a frozen parameter and an unknown name are all rejected
    /// before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = store
                .get(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
            if p.frozen {
                return Err(Error::Contract(format!("gradient supplied for frozen parameter `{name}`")));
            }
            if g.shape() != p.value.shape() {
                return Err(Error::shape("adam_step", p.value.shape(), g.shape()));
            }
        }
        for (name, _) in store.trainable() {
            if grads.get(name).is_none() {
                return Err(Error::Contract(format!("missing gradient for trainable parameter `{name}`")));
            }
            if !self.moments.contains_key(name) {
                return Err(Error::Contract(format!(
                    "parameter `{name}` was frozen when the optimizer was created"
                )));
            }
        }

        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let step = T::of(lr / bc1);
        let (rbc2, eps) = (T::of(1.0 / bc2), T::of(eps));
        for (name, g) in grads.iter() {
            let mo = self.moments.get_mut(name).expect("checked above");
            let p = store.get_mut(name).expect("checked above");
            let values = p.value.data_mut();
            for (((x, &gi), m), v) in values
                .iter_mut()
                .zip(g.data())
                .zip(mo.m.data_mut())
                .zip(mo.v.data_mut())
            {
                *m = b1 * *m + one_b1 * gi;
                *v = b2 * *v + one_b2 * gi * gi;
                *x -= step * *m / ((*v * rbc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
