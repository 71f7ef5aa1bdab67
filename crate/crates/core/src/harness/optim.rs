use serde::{Deserialize, Serialize};

use crate::adapter::{Gradients, ILoRALayer, ParamId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction, one moment pair per trainable tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

fn slot(id: ParamId, heads: usize) -> usize {
    match id {
        ParamId::A => 0,
        ParamId::B(i) => 1 + i,
        ParamId::Wr => 1 + heads,
    }
}

impl Adam {
    pub fn new(cfg: AdamConfig, layer: &ILoRALayer) -> Self {
        let sizes: Vec<usize> = layer
            .param_ids()
            .into_iter()
            .map(|id| layer.param(id).as_slice().len())
            .collect();
        Adam {
            cfg,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, layer: &mut ILoRALayer, grads: &Gradients) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let heads = layer.config().n;
        let (first, second) = (&mut self.first, &mut self.second);
        layer.update_params(|id, values| {
            let k = slot(id, heads);
            let g = grads.get(id).as_slice();
            for (((w, &gi), m), v) in values.iter_mut().zip(g).zip(&mut first[k]).zip(&mut second[k]) {
                *m = beta1 * *m + (1.0 - beta1) * gi;
                *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        });
    }
}
