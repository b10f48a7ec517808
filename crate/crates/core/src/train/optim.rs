use serde::{Deserialize, Serialize};

use crate::backbones::Network;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    SgdMomentum,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Half-cosine decay from the base rate to zero over all steps.
    #[default]
    Cosine,
    Constant,
}

impl Schedule {
    pub fn rate(&self, base: f64, step: usize, total_steps: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => {
                let progress = step as f64 / total_steps.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

/// SGD with optional heavy-ball momentum and L2 weight decay:
/// `v ← μ·v + (g + λ·w)`, `w ← w − η·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f32,
    weight_decay: f32,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(kind: OptimizerKind, momentum: f64, weight_decay: f64, net: &Network) -> Self {
        Self {
            momentum: match kind {
                OptimizerKind::SgdMomentum => momentum as f32,
                OptimizerKind::Sgd => 0.0,
            },
            weight_decay: weight_decay as f32,
            velocity: net.params().iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &[Tensor], lr: f64) {
        let lr = lr as f32;
        for ((p, g), v) in net.params_mut().into_iter().zip(grads).zip(&mut self.velocity) {
            for ((w, &gw), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vel = self.momentum * *vel + gw + self.weight_decay * *w;
                *w -= lr * *vel;
            }
        }
    }
}
