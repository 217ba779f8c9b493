use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::tensor::ParamSlot;

/// SGD with classical momentum and per-tensor gradient-norm clipping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Per-tensor L2 bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 1e-3,
            momentum: 0.9,
            grad_clip: Some(5.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub config: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(config: SgdConfig) -> Self {
        SgdMomentum {
            config,
            velocity: Vec::new(),
        }
    }

    /// `v <- μ v - lr g; value += v`, clipping `g` first when its norm exceeds the bound.
    ///
    /// `params` must be passed in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut ParamSlot]) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} tensors, step got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        for p in params.iter() {
            if !p.grad.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient in {}", p.name)));
            }
        }
        let SgdConfig {
            lr,
            momentum,
            grad_clip,
        } = self.config;
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            if v.len() != p.numel() {
                return Err(Error::State(format!("optimizer state mismatch for {}", p.name)));
            }
            let norm = p.grad.l2_norm();
            let scale = match grad_clip {
                Some(bound) if norm > bound => bound / norm,
                _ => 1.0,
            };
            let g = p.grad.data().to_vec();
            for ((val, vel), g) in p.value.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *vel = momentum * *vel - lr * scale * g;
                *val += *vel;
            }
        }
        Ok(())
    }
}
