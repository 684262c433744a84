//! Masked-language-model pretraining of the backbone on the synthetic
//! corpus. Produces the θ_f⁰ every downstream strategy starts from.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{forward_mlm_loss, Backbone, ForwardAttach, MlmExample};
use crate::error::{EhError, Result};
use crate::numcore::Graph;
use crate::tasks::{Corpus, CLS, MASK};
use crate::trainer::{lr_at, AdamState, BatchSampler, OptimConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    /// Fraction of non-CLS positions replaced by the mask id.
    pub mask_fraction: f32,
    /// Sequences reserved (from the corpus tail) for held-out loss.
    pub holdout: usize,
    pub optim: OptimConfig,
}

impl PretrainConfig {
    pub fn desk(steps: usize) -> Self {
        PretrainConfig { steps, mask_fraction: 0.15, holdout: 64, optim: OptimConfig::with_lr(3e-3) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainReport {
    pub loss_curve: Vec<f32>,
    pub holdout_loss: f32,
}

/// Prepend CLS and mask ~`fraction` of the content positions (≥ 1).
fn mask_sequence(seq: &[usize], fraction: f32, rng: &mut ChaCha8Rng) -> MlmExample {
    let mut tokens = Vec::with_capacity(seq.len() + 1);
    tokens.push(CLS);
    tokens.extend_from_slice(seq);
    let mut mask_positions = Vec::new();
    let mut original_ids = Vec::new();
    for pos in 1..tokens.len() {
        if rng.gen_bool(fraction as f64) {
            mask_positions.push(pos);
        }
    }
    if mask_positions.is_empty() {
        mask_positions.push(rng.gen_range(1..tokens.len()));
    }
    for &pos in &mask_positions {
        original_ids.push(tokens[pos]);
        tokens[pos] = MASK;
    }
    MlmExample { tokens, mask_positions, original_ids }
}

fn holdout_loss(bb: &Backbone, holdout: &[Vec<usize>], fraction: f32, seed: u64) -> Result<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0f64;
    let mut weight = 0usize;
    for chunk in holdout.chunks(16) {
        let batch: Vec<MlmExample> =
            chunk.iter().map(|s| mask_sequence(s, fraction, &mut rng)).collect();
        let masked: usize = batch.iter().map(|e| e.mask_positions.len()).sum();
        let mut g = Graph::new();
        let nodes = bb.params.register(&mut g, false);
        let loss = forward_mlm_loss(&mut g, &nodes, &bb.cfg, &batch, ForwardAttach::none())?;
        total += g.value(loss).data()[0] as f64 * masked as f64;
        weight += masked;
    }
    Ok((total / weight as f64) as f32)
}

/// Train the whole backbone (including the mlm projection) in place.
pub fn pretrain(
    bb: &mut Backbone,
    corpus: &Corpus,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<PretrainReport> {
    if cfg.holdout >= corpus.sequences.len() {
        return Err(EhError::Config(format!(
            "holdout {} leaves no training sequences (corpus has {})",
            cfg.holdout,
            corpus.sequences.len()
        )));
    }
    if !(0.0..1.0).contains(&cfg.mask_fraction) || cfg.mask_fraction == 0.0 {
        return Err(EhError::Config(format!("mask_fraction {} outside (0, 1)", cfg.mask_fraction)));
    }
    let n_train = corpus.sequences.len() - cfg.holdout;
    let train = &corpus.sequences[..n_train];
    let held = &corpus.sequences[n_train..];

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6c_6d00);
    let mut sampler = BatchSampler::new(n_train, cfg.optim.batch_size, seed ^ 0x6261_7463)?;
    let mut adam = AdamState::new();
    let mut loss_curve = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let lr = lr_at(step, cfg.steps, &cfg.optim)?;
        let idx = sampler.next_batch();
        let batch: Vec<MlmExample> =
            idx.iter().map(|&i| mask_sequence(&train[i], cfg.mask_fraction, &mut rng)).collect();
        let mut g = Graph::new();
        let nodes = bb.params.register(&mut g, true);
        let loss = forward_mlm_loss(&mut g, &nodes, &bb.cfg, &batch, ForwardAttach::none())?;
        let loss_val = g.value(loss).data()[0];
        if !loss_val.is_finite() {
            return Err(EhError::Training { step, msg: "pretraining loss diverged".into() });
        }
        loss_curve.push(loss_val);
        g.backward(loss)?;
        adam.begin_step();
        for (name, id) in &nodes {
            let grad = match g.grad(*id) {
                Some(gr) => gr.to_vec(),
                None => vec![0.0; g.value(*id).numel()],
            };
            adam.update(&cfg.optim, lr, name, bb.params.get_mut(name)?, &grad)?;
        }
    }
    let holdout_loss = holdout_loss(bb, held, cfg.mask_fraction, seed ^ 0x6576_616c)?;
    Ok(PretrainReport { loss_curve, holdout_loss })
}
