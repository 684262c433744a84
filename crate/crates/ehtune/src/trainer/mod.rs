//! AdamW with decoupled weight decay, the warmup/decay schedule, stage
//! budget arithmetic, and the deterministic batch sampler. The strategy
//! layer (which wires these to the model) lives in [`strategy`].

pub mod pretrain;
pub mod strategy;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EhError, Result};
use crate::numcore::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr_peak: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    pub warmup_fraction: f32,
    pub batch_size: usize,
}

impl OptimConfig {
    pub fn with_lr(lr_peak: f32) -> Self {
        OptimConfig {
            lr_peak,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 0.1,
            warmup_fraction: 0.10,
            batch_size: 32,
        }
    }
}

/// Linear warmup to `peak` then linear decay to 0. Warmup length is
/// round(warmup_fraction · total); the first step already has a nonzero
/// rate and the peak is reached at the end of warmup.
pub fn lr_at(step: usize, total: usize, cfg: &OptimConfig) -> Result<f32> {
    if total == 0 || step >= total {
        return Err(EhError::Config(format!("lr_at: step {step} outside budget {total}")));
    }
    let warmup = ((total as f64 * cfg.warmup_fraction as f64) + 0.5).floor() as usize;
    let lr = if warmup > 0 && step < warmup {
        cfg.lr_peak as f64 * (step + 1) as f64 / warmup as f64
    } else if total == warmup {
        cfg.lr_peak as f64
    } else {
        cfg.lr_peak as f64 * (total - step) as f64 / (total - warmup) as f64
    };
    Ok(lr as f32)
}

/// Split a total step budget into (stage 1, stage 2) with round-half-up
/// on the stage-1 share: split_budget(1000, 0.1) == (100, 900).
pub fn split_budget(total: usize, stage1_fraction: f32) -> Result<(usize, usize)> {
    if !(0.0..=1.0).contains(&stage1_fraction) {
        return Err(EhError::Config(format!("stage1_fraction {stage1_fraction} outside [0, 1]")));
    }
    if total == 0 {
        return Err(EhError::Config("split_budget: zero total budget".into()));
    }
    let s1 = ((total as f64 * stage1_fraction as f64) + 0.5).floor() as usize;
    let s1 = s1.min(total);
    Ok((s1, total - s1))
}

/// Per-parameter first/second moment buffers plus the shared step count.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    t: usize,
    m: HashMap<String, Vec<f32>>,
    v: HashMap<String, Vec<f32>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Advance the shared timestep; call once per optimizer step, before
    /// any `update`.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn step_count(&self) -> usize {
        self.t
    }

    /// One AdamW update for a single named tensor. Weight decay is
    /// decoupled and applied only to 2-D tensors (weight matrices).
    pub fn update(
        &mut self,
        cfg: &OptimConfig,
        lr: f32,
        name: &str,
        w: &mut Tensor,
        grad: &[f32],
    ) -> Result<()> {
        if self.t == 0 {
            return Err(EhError::Contract("AdamState::update before begin_step".into()));
        }
        if grad.len() != w.numel() {
            return Err(EhError::Shape(format!(
                "grad for {name:?}: {} elements vs {}",
                grad.len(),
                w.numel()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(EhError::Training {
                step: self.t,
                msg: format!("non-finite gradient for {name:?}"),
            });
        }
        let n = w.numel();
        let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        if m.len() != n {
            return Err(EhError::Shape(format!("optimizer state for {name:?} has wrong size")));
        }
        let b1 = cfg.beta1 as f64;
        let b2 = cfg.beta2 as f64;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let decay = if w.shape().len() == 2 { cfg.weight_decay as f64 } else { 0.0 };
        let lr = lr as f64;
        let data = w.data_mut();
        for i in 0..n {
            let g = grad[i] as f64;
            let mi = b1 * m[i] as f64 + (1.0 - b1) * g;
            let vi = b2 * v[i] as f64 + (1.0 - b2) * g * g;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let update = (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps as f64);
            data[i] = (data[i] as f64 - lr * update - lr * decay * data[i] as f64) as f32;
        }
        Ok(())
    }
}

/// Epoch-wise shuffled minibatch index stream, reproducible from a seed.
#[derive(Debug)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(EhError::Config(format!(
                "sampler needs n > 0 and batch_size > 0, got ({n}, {batch_size})"
            )));
        }
        let mut s = BatchSampler {
            order: (0..n).collect(),
            cursor: 0,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        Ok(s)
    }

    /// Next minibatch of example indices; short final batch, then reshuffle.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}
