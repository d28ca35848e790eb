use crate::checkpoint::{Checkpoint, Value};
use crate::error::{CheckpointError, Result};
use crate::params::ParamStore;
use crate::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per store entry, in store order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape().to_vec())).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Entries whose gradient is `None` are skipped.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) {
        assert_eq!(grads.len(), store.len(), "one gradient slot per parameter");
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (k, ((_, p), g)) in store.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (((w, gi), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }

    pub fn write_into(&self, ckpt: &mut Checkpoint, prefix: &str, store: &ParamStore) -> Result<(), CheckpointError> {
        ckpt.put_scalar(&format!("{prefix}step"), self.step as f64)?;
        for ((key, _), (m, v)) in store.iter().zip(self.m.iter().zip(&self.v)) {
            ckpt.insert(format!("{prefix}m.{key}"), Value::F32(m.clone()))?;
            ckpt.insert(format!("{prefix}v.{key}"), Value::F32(v.clone()))?;
        }
        Ok(())
    }

    pub fn read_from(&mut self, ckpt: &Checkpoint, prefix: &str, store: &ParamStore) -> Result<(), CheckpointError> {
        self.step = ckpt.scalar(&format!("{prefix}step"))? as u64;
        for ((key, p), (m, v)) in store.iter().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (slot, kind) in [(m, "m"), (v, "v")] {
                let full = format!("{prefix}{kind}.{key}");
                let t = ckpt.get(&full).ok_or_else(|| CheckpointError::MissingKey(full.clone()))?.to_f32();
                if t.shape() != p.value.shape() {
                    return Err(CheckpointError::ShapeMismatch {
                        key: full,
                        expected: p.value.shape().to_vec(),
                        found: t.shape().to_vec(),
                    });
                }
                *slot = t;
            }
        }
        Ok(())
    }
}
