//! Parameter-efficient tuning mechanisms for stage 1: bias-only training
//! (BitFit), low-rank deltas on Q/V projections (LoRA), learned per-layer
//! key/value prefixes (prefix-tuning), plus top-k layer unfreezing and the
//! restore step that snaps the backbone back to its pretrained weights.
//!
//! Naming conventions:
//!   - backbone "body" = every backbone parameter except the `mlm.*`
//!     pretraining projection, which downstream runs never train;
//!   - adapter parameters live under `adapter.*`;
//!   - head parameters live under `head.*`.

use std::collections::BTreeSet;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{lora_param_name, prefix_param_name, Backbone, ForwardAttach};
use crate::error::{EhError, Result};
use crate::head::Head;
use crate::numcore::{ParamStore, Tensor};

/// Is this backbone parameter part of the downstream body (θ_f)?
pub fn is_body_param(name: &str) -> bool {
    !name.starts_with("mlm.")
}

/// Disjoint split of all named parameters into trainable and frozen.
/// Immutable after creation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamPartition {
    trainable: BTreeSet<String>,
    frozen: BTreeSet<String>,
}

impl ParamPartition {
    /// Build from the full name universe and a trainability predicate.
    pub fn from_predicate<'a>(
        universe: impl Iterator<Item = &'a str>,
        trainable: impl Fn(&str) -> bool,
    ) -> Self {
        let mut t = BTreeSet::new();
        let mut f = BTreeSet::new();
        for name in universe {
            if trainable(name) {
                t.insert(name.to_string());
            } else {
                f.insert(name.to_string());
            }
        }
        ParamPartition { trainable: t, frozen: f }
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.contains(name)
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.trainable.iter().map(|s| s.as_str())
    }

    pub fn frozen_names(&self) -> impl Iterator<Item = &str> {
        self.frozen.iter().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.trainable.len() + self.frozen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn universe<'a>(
    bb: &'a Backbone,
    head: &'a Head,
    adapters: Option<&'a ParamStore>,
) -> impl Iterator<Item = &'a str> {
    bb.params
        .names()
        .chain(head.params.names())
        .chain(adapters.into_iter().flat_map(|a| a.names()))
}

/// Full finetuning: every body parameter plus the head.
pub fn apply_ft(bb: &Backbone, head: &Head) -> ParamPartition {
    ParamPartition::from_predicate(universe(bb, head, None), |n| {
        n.starts_with("head.") || is_body_param(n)
    })
}

/// Linear probing: head only.
pub fn apply_lp(bb: &Backbone, head: &Head) -> ParamPartition {
    ParamPartition::from_predicate(universe(bb, head, None), |n| n.starts_with("head."))
}

/// The bias-name mask: every body parameter ending in ".bias", including
/// layer-norm biases; never weights, embeddings, or LN gains.
pub fn bitfit_mask(bb: &Backbone) -> BTreeSet<String> {
    bb.params
        .names()
        .filter(|n| is_body_param(n) && n.ends_with(".bias"))
        .map(|s| s.to_string())
        .collect()
}

/// BitFit: backbone biases plus the (always fully trainable) head.
pub fn apply_bitfit(bb: &Backbone, head: &Head) -> ParamPartition {
    let mask = bitfit_mask(bb);
    ParamPartition::from_predicate(universe(bb, head, None), |n| {
        n.starts_with("head.") || mask.contains(n)
    })
}

/// Low-rank adapter on the Q and V projections of every layer.
/// A is seeded scaled-normal, B is zero, so the attachment starts as a no-op.
#[derive(Debug, Clone)]
pub struct LoraAdapter {
    pub rank: usize,
    pub alpha: f32,
    pub params: ParamStore,
}

impl LoraAdapter {
    pub fn attach_spec(&self) -> ForwardAttach {
        ForwardAttach { lora: Some((self.rank, self.alpha)), prefix_len: 0 }
    }

    /// n_layers·2·r·(d_in + d_out)
    pub fn param_count(&self) -> usize {
        self.params.num_params()
    }
}

pub fn attach_lora(
    bb: &Backbone,
    head: &Head,
    r: usize,
    alpha: f32,
    seed: u64,
) -> Result<(LoraAdapter, ParamPartition)> {
    let d = bb.cfg.d_model;
    if r == 0 || r > d {
        return Err(EhError::Config(format!("lora rank {r} out of 1..={d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    for layer in 0..bb.cfg.n_layers {
        for proj in ["q", "v"] {
            params.insert(
                lora_param_name(layer, proj, "a"),
                Tensor::randn(vec![r, d], crate::backbone::INIT_STD, &mut rng),
            );
            params.insert(lora_param_name(layer, proj, "b"), Tensor::zeros(vec![d, r]));
        }
    }
    let adapter = LoraAdapter { rank: r, alpha, params };
    let part = ParamPartition::from_predicate(
        universe(bb, head, Some(&adapter.params)),
        |n| n.starts_with("head.") || n.starts_with("adapter."),
    );
    Ok((adapter, part))
}

/// Fold (α/r)·B·A into the target weights and drop the adapter.
/// Forward outputs are preserved to ~1e-5.
pub fn merge_lora(bb: &mut Backbone, adapter: &LoraAdapter) -> Result<()> {
    let d = bb.cfg.d_model;
    let r = adapter.rank;
    let scale = adapter.alpha / r as f32;
    for layer in 0..bb.cfg.n_layers {
        for proj in ["q", "v"] {
            let a = adapter.params.get(&lora_param_name(layer, proj, "a"))?;
            let b = adapter.params.get(&lora_param_name(layer, proj, "b"))?;
            let w = bb.params.get_mut(&format!("layer.{layer}.attn.{proj}.weight"))?;
            // W[d_in, d_out] += scale · Aᵀ·Bᵀ  (so x·W picks up (α/r)·x·Aᵀ·Bᵀ)
            let wd = w.data_mut();
            for i in 0..d {
                for j in 0..d {
                    let mut acc = 0.0f64;
                    for l in 0..r {
                        acc += a.at(l, i) as f64 * b.at(j, l) as f64;
                    }
                    wd[i * d + j] += scale * acc as f32;
                }
            }
        }
    }
    Ok(())
}

/// Per-layer learned key/value prefix rows. L = 0 is the empty prefix.
#[derive(Debug, Clone)]
pub struct PrefixState {
    pub len: usize,
    pub params: ParamStore,
}

impl PrefixState {
    pub fn attach_spec(&self) -> ForwardAttach {
        ForwardAttach { lora: None, prefix_len: self.len }
    }

    /// n_layers·2·L·d_model
    pub fn param_count(&self) -> usize {
        self.params.num_params()
    }
}

pub fn attach_prefix(
    bb: &Backbone,
    head: &Head,
    len: usize,
    seed: u64,
) -> Result<(PrefixState, ParamPartition)> {
    if len > bb.cfg.max_seq_len {
        return Err(EhError::Config(format!(
            "prefix length {len} exceeds max_seq_len {}",
            bb.cfg.max_seq_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    if len > 0 {
        for layer in 0..bb.cfg.n_layers {
            for which in ["k", "v"] {
                params.insert(
                    prefix_param_name(layer, which),
                    Tensor::randn(vec![len, bb.cfg.d_model], crate::backbone::INIT_STD, &mut rng),
                );
            }
        }
    }
    let state = PrefixState { len, params };
    let part = ParamPartition::from_predicate(
        universe(bb, head, Some(&state.params)),
        |n| n.starts_with("head.") || n.starts_with("adapter."),
    );
    Ok((state, part))
}

/// Top-k layer tuning. The top k transformer layers, the final layer norm,
/// and the head train; embeddings and lower layers freeze. k = n_layers is
/// the full-finetuning partition (embeddings included).
pub fn apply_topk(bb: &Backbone, head: &Head, k: usize) -> Result<ParamPartition> {
    let n = bb.cfg.n_layers;
    if k == 0 || k > n {
        return Err(EhError::Config(format!("top-k {k} out of 1..={n}")));
    }
    if k == n {
        return Ok(apply_ft(bb, head));
    }
    let first_trainable = n - k;
    Ok(ParamPartition::from_predicate(universe(bb, head, None), move |name| {
        if name.starts_with("head.") || name.starts_with("final_ln.") {
            return true;
        }
        if let Some(rest) = name.strip_prefix("layer.") {
            if let Some((idx, _)) = rest.split_once('.') {
                if let Ok(i) = idx.parse::<usize>() {
                    return i >= first_trainable;
                }
            }
        }
        false
    }))
}

/// Snap every backbone parameter back to the snapshot, bitwise. Adapters
/// are dropped by the caller (or kept, for the reserve variant); the head
/// is untouched. Idempotent.
pub fn restore_backbone(bb: &mut Backbone, snapshot: &ParamStore) -> Result<()> {
    let have: BTreeSet<&str> = bb.params.names().collect();
    let want: BTreeSet<&str> = snapshot.names().collect();
    if have != want {
        return Err(EhError::Checkpoint(format!(
            "restore: parameter name sets differ ({} vs {} names)",
            have.len(),
            want.len()
        )));
    }
    bb.params.copy_from(snapshot)
}

/// Trainable (body + adapter) element count over body element count.
/// The head is excluded from both sides.
pub fn trainable_fraction(
    partition: &ParamPartition,
    bb: &Backbone,
    adapters: Option<&ParamStore>,
) -> f32 {
    let body_total: usize = bb
        .params
        .iter()
        .filter(|(n, _)| is_body_param(n))
        .map(|(_, t)| t.numel())
        .sum();
    let mut trainable: usize = bb
        .params
        .iter()
        .filter(|(n, _)| is_body_param(n) && partition.is_trainable(n))
        .map(|(_, t)| t.numel())
        .sum();
    if let Some(ad) = adapters {
        trainable += ad
            .iter()
            .filter(|(n, _)| partition.is_trainable(n))
            .map(|(_, t)| t.numel())
            .sum::<usize>();
    }
    trainable as f32 / body_total as f32
}
