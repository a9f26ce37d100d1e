use serde::{Deserialize, Serialize};

use super::lstm::PolicyParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerKind {
    /// Plain gradient descent.
    #[default]
    Sgd,
    Momentum {
        beta: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, num_params: usize) -> Self {
        let v = match kind {
            OptimizerKind::Adam { .. } => vec![0.0; num_params],
            _ => Vec::new(),
        };
        let m = match kind {
            OptimizerKind::Sgd => Vec::new(),
            _ => vec![0.0; num_params],
        };
        Self { kind, m, v, steps: 0 }
    }

    /// Descends along `grads` with step size `lr`.
    pub fn step(&mut self, params: &mut PolicyParams, grads: &PolicyParams, lr: f64) {
        self.steps += 1;
        let mut offset = 0;
        for (dst, g) in params.blocks_mut().into_iter().zip(grads.blocks()) {
            for (j, (p, &gj)) in dst.iter_mut().zip(g).enumerate() {
                let idx = offset + j;
                *p -= match self.kind {
                    OptimizerKind::Sgd => lr * gj,
                    OptimizerKind::Momentum { beta } => {
                        self.m[idx] = beta * self.m[idx] + gj;
                        lr * self.m[idx]
                    }
                    OptimizerKind::Adam { beta1, beta2, eps } => {
                        self.m[idx] = beta1 * self.m[idx] + (1.0 - beta1) * gj;
                        self.v[idx] = beta2 * self.v[idx] + (1.0 - beta2) * gj * gj;
                        let mh = self.m[idx] / (1.0 - beta1.powi(self.steps as i32));
                        let vh = self.v[idx] / (1.0 - beta2.powi(self.steps as i32));
                        lr * mh / (vh.sqrt() + eps)
                    }
                };
            }
            offset += g.len();
        }
    }
}
