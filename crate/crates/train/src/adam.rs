//! Adam with bias correction and no weight decay.

use std::collections::BTreeMap;

use tetrad_core::{ParamId, ParamStore, Scalar, Tensor};

use crate::error::{Result, TrainError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Moments are keyed by parameter name so they survive a checkpoint
/// round-trip into a freshly built store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    /// Completed updates.
    pub step: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// One update from `grads`. A gradient for a frozen parameter is a
    /// contract violation, not something to silently apply.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::lit(1.0 - c.beta1.powi(t));
        let bc2 = T::lit(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one, lr, eps) = (T::one(), T::lit(c.lr), T::lit(c.eps));
        for (id, g) in grads {
            let p = store.get_mut(*id);
            if !p.trainable {
                return Err(TrainError::Config(format!("gradient reached frozen parameter `{}`", p.name)));
            }
            p.tensor.expect_same_shape("adam", g)?;
            let m = self.m.entry(p.name.clone()).or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let v = self.v.entry(p.name.clone()).or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let (w, m, v) = (p.tensor.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                w[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
