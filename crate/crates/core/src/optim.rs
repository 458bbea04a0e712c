//! SGD with Nesterov momentum, L2 weight decay, and a linear learning-rate
//! decay schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    /// Rescale the joint gradient of one `step` call to at most this L2 norm.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { lr: 0.05, momentum: 0.9, weight_decay: 5e-4, nesterov: true, clip_norm: None }
    }
}

/// Learning rate at `step` of `total` under linear decay to zero.
pub fn linear_decay(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * (1.0 - step as f64 / total as f64)
}

/// Momentum state keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    pub config: SgdConfig,
    buffers: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Sgd { config, buffers: BTreeMap::new() }
    }

    pub fn state_keys(&self) -> impl Iterator<Item = &str> {
        self.buffers.keys().map(String::as_str)
    }

    /// Registers zeroed momentum buffers for `params`.
    pub fn init<'a>(&mut self, params: impl IntoIterator<Item = (&'a str, &'a Tensor)>) {
        for (name, t) in params {
            self.buffers.entry(name.to_string()).or_insert_with(|| vec![0.0; t.numel()]);
        }
    }

    /// Applies one update to every parameter and clears its gradient.
    /// Parameters without a gradient are still decayed. Clipping, when
    /// configured, sees only the gradients passed to this call.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = (&'a str, &'a mut Tensor)>, lr: f64) {
        let SgdConfig { momentum, weight_decay, nesterov, clip_norm, .. } = self.config;
        let grads: Vec<_> = params
            .into_iter()
            .map(|(name, t)| {
                let g = t.grad().unwrap_or_else(|| vec![0.0; t.numel()]);
                t.zero_grad();
                (name, t, g)
            })
            .collect();
        let scale = match clip_norm {
            Some(c) => {
                let norm = grads.iter().flat_map(|(_, _, g)| g).map(|x| x * x).sum::<f64>().sqrt();
                if norm > c { c / norm } else { 1.0 }
            }
            None => 1.0,
        };
        for (name, t, grad) in grads {
            let buf = self.buffers.entry(name.to_string()).or_insert_with(|| vec![0.0; grad.len()]);
            let values = t.values_mut();
            for ((v, g), b) in values.iter_mut().zip(grad).zip(buf.iter_mut()) {
                let d = scale * g + weight_decay * *v;
                *b = momentum * *b + d;
                let update = if nesterov { d + momentum * *b } else { *b };
                *v -= lr * update;
            }
        }
    }
}
