use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// AdamW with decoupled weight decay. Moments are kept in `f64`.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    /// per-parameter switch for weight decay
    pub decay: Vec<bool>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new<F: Real>(config: AdamWConfig, params: &[Tensor<F>], decay: Vec<bool>) -> Self {
        assert_eq!(decay.len(), params.len());
        Self {
            config,
            decay,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update at learning rate `lr`.
    pub fn step<F: Real>(&mut self, params: &mut [Tensor<F>], grads: &[Tensor<F>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::invalid("adamw", "parameter count changed"));
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape("adamw", p.shape(), g.shape()));
            }
            let wd = if self.decay[i] { c.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data: Vec<F> = p
                .data()
                .iter()
                .zip(g.data())
                .enumerate()
                .map(|(j, (&x, &gj))| {
                    let (x, gj) = (x.to_f64_lossy(), gj.to_f64_lossy());
                    m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                    v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                    let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps);
                    F::lit(x - lr * wd * x - lr * update)
                })
                .collect();
            *p = Tensor::new(p.shape(), data)?;
        }
        Ok(())
    }
}

/// Linear warmup to `peak` over `warmup` steps, then cosine decay to zero
/// at `total`. Steps are 1-based.
pub fn lr_at(step: usize, peak: f64, warmup: usize, total: usize) -> f64 {
    if warmup > 0 && step <= warmup {
        return peak * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return peak;
    }
    let t = ((step - warmup) as f64 / (total - warmup) as f64).min(1.0);
    0.5 * peak * (1.0 + (std::f64::consts::PI * t).cos())
}

pub fn global_norm<F: Real>(grads: &[Tensor<F>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| {
            let x = x.to_f64_lossy();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<F: Real>(grads: &mut [Tensor<F>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let k = F::lit(max_norm / norm);
        for g in grads.iter_mut() {
            *g = g.map(|x| x * k);
        }
    }
    norm
}
