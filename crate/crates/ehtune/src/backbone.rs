//! Miniature transformer encoder: the feature extractor whose pretrained
//! weights the two-stage trainer keeps returning to.
//!
//! Pooling is the final-layer hidden state at reserved position 0. Layers
//! are pre-norm; attention accepts optional per-layer key/value prefixes
//! and optional low-rank deltas on the Q and V projections.

use indexmap::IndexMap;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EhError, Result};
use crate::numcore::{Graph, NodeId, ParamStore, Tensor};

pub type NodeMap = IndexMap<String, NodeId>;

pub const INIT_STD: f32 = 0.02;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    /// Kept at 0 so every measurement is deterministic.
    #[serde(default)]
    pub dropout: f32,
}

impl BackboneConfig {
    /// vocab 64, seq 32, d_model 64, 4 heads, 2 layers, d_ff 128.
    pub fn desk() -> Self {
        BackboneConfig {
            vocab_size: 64,
            max_seq_len: 32,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 128,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return Err(EhError::Config("all backbone dims must be >= 1".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(EhError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(EhError::Config("max_seq_len must be >= 2".into()));
        }
        if self.vocab_size < 4 {
            return Err(EhError::Config("vocab_size must cover the reserved ids".into()));
        }
        if self.dropout != 0.0 {
            return Err(EhError::Config("dropout must be 0 in this implementation".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Which extra parameters participate in a forward pass, and under which
/// `adapter.*` names they are found in the node map.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ForwardAttach {
    /// (rank, alpha) for low-rank deltas on every layer's Q and V projection.
    pub lora: Option<(usize, f32)>,
    /// Number of learned key/value rows prepended to every layer's attention.
    pub prefix_len: usize,
}

impl ForwardAttach {
    pub fn none() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub params: ParamStore,
}

pub fn lora_param_name(layer: usize, proj: &str, which: &str) -> String {
    format!("adapter.layer.{layer}.{proj}.{which}")
}

pub fn prefix_param_name(layer: usize, which: &str) -> String {
    format!("adapter.prefix.layer.{layer}.{which}")
}

impl Backbone {
    pub fn build(cfg: BackboneConfig, seed: u64) -> Result<Backbone> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let mut p = ParamStore::new();
        let w = |p: &mut ParamStore, name: String, shape: Vec<usize>, rng: &mut ChaCha8Rng| {
            p.insert(name, Tensor::randn(shape, INIT_STD, rng));
        };
        w(&mut p, "embed.token.weight".to_string(), vec![cfg.vocab_size, d], &mut rng);
        w(&mut p, "embed.pos.weight".to_string(), vec![cfg.max_seq_len, d], &mut rng);
        for i in 0..cfg.n_layers {
            p.insert(format!("layer.{i}.ln1.gain"), Tensor::ones(vec![d]));
            p.insert(format!("layer.{i}.ln1.bias"), Tensor::zeros(vec![d]));
            for proj in ["q", "k", "v", "o"] {
                w(&mut p, format!("layer.{i}.attn.{proj}.weight"), vec![d, d], &mut rng);
                p.insert(format!("layer.{i}.attn.{proj}.bias"), Tensor::zeros(vec![d]));
            }
            p.insert(format!("layer.{i}.ln2.gain"), Tensor::ones(vec![d]));
            p.insert(format!("layer.{i}.ln2.bias"), Tensor::zeros(vec![d]));
            w(&mut p, format!("layer.{i}.ffn.w1.weight"), vec![d, cfg.d_ff], &mut rng);
            p.insert(format!("layer.{i}.ffn.w1.bias"), Tensor::zeros(vec![cfg.d_ff]));
            w(&mut p, format!("layer.{i}.ffn.w2.weight"), vec![cfg.d_ff, d], &mut rng);
            p.insert(format!("layer.{i}.ffn.w2.bias"), Tensor::zeros(vec![d]));
        }
        p.insert("final_ln.gain", Tensor::ones(vec![d]));
        p.insert("final_ln.bias", Tensor::zeros(vec![d]));
        w(&mut p, "mlm.weight".to_string(), vec![d, cfg.vocab_size], &mut rng);
        p.insert("mlm.bias", Tensor::zeros(vec![cfg.vocab_size]));
        Ok(Backbone { cfg, params: p })
    }

    /// Closed-form parameter count for the config; audited against
    /// enumeration in tests.
    pub fn expected_param_count(cfg: &BackboneConfig) -> usize {
        let d = cfg.d_model;
        let per_layer = 2 * d            // ln1
            + 4 * (d * d + d)            // q k v o
            + 2 * d                      // ln2
            + d * cfg.d_ff + cfg.d_ff    // ffn.w1
            + cfg.d_ff * d + d; // ffn.w2
        cfg.vocab_size * d               // token embeddings
            + cfg.max_seq_len * d        // position embeddings
            + cfg.n_layers * per_layer
            + 2 * d                      // final_ln
            + d * cfg.vocab_size + cfg.vocab_size // mlm head
    }

    /// Convenience non-training forward: builds a throwaway graph.
    /// `adapters` supplies `adapter.*` tensors when `attach` needs them.
    pub fn features(
        &self,
        tokens: &[Vec<usize>],
        adapters: Option<&ParamStore>,
        attach: ForwardAttach,
    ) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut nodes = self.params.register(&mut g, false);
        if let Some(ad) = adapters {
            nodes.extend(ad.register(&mut g, false));
        }
        let out = forward_features(&mut g, &nodes, &self.cfg, tokens, attach)?;
        Ok(g.value(out).clone())
    }
}

fn check_tokens(cfg: &BackboneConfig, tokens: &[usize]) -> Result<()> {
    if tokens.len() > cfg.max_seq_len {
        return Err(EhError::Shape(format!(
            "sequence length {} exceeds max_seq_len {}",
            tokens.len(),
            cfg.max_seq_len
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(EhError::Index(format!("token id {bad} out of vocab {}", cfg.vocab_size)));
    }
    Ok(())
}

fn node(nodes: &NodeMap, name: &str) -> Result<NodeId> {
    nodes
        .get(name)
        .copied()
        .ok_or_else(|| EhError::Contract(format!("node map is missing {name:?}")))
}

/// Linear projection with optional low-rank delta: x·W + b [+ (α/r)·x·Aᵀ·Bᵀ].
fn project(
    g: &mut Graph,
    nodes: &NodeMap,
    x: NodeId,
    layer: usize,
    proj: &str,
    lora: Option<(usize, f32)>,
) -> Result<NodeId> {
    let w = node(nodes, &format!("layer.{layer}.attn.{proj}.weight"))?;
    let b = node(nodes, &format!("layer.{layer}.attn.{proj}.bias"))?;
    let mut out = g.matmul(x, w)?;
    out = g.add_row_bias(out, b)?;
    if let Some((r, alpha)) = lora {
        if proj == "q" || proj == "v" {
            let a = node(nodes, &lora_param_name(layer, proj, "a"))?;
            let bb = node(nodes, &lora_param_name(layer, proj, "b"))?;
            let h = g.matmul_nt(x, a)?;
            let delta = g.matmul_nt(h, bb)?;
            let scaled = g.scale(delta, alpha / r as f32);
            out = g.add(out, scaled)?;
        }
    }
    Ok(out)
}

/// Encode one sequence to its final hidden states [s, d_model].
fn encode(
    g: &mut Graph,
    nodes: &NodeMap,
    cfg: &BackboneConfig,
    tokens: &[usize],
    attach: ForwardAttach,
) -> Result<NodeId> {
    check_tokens(cfg, tokens)?;
    let s = tokens.len();
    let dh = cfg.head_dim();
    let tok_emb = node(nodes, "embed.token.weight")?;
    let pos_emb = node(nodes, "embed.pos.weight")?;
    let te = g.gather_rows(tok_emb, tokens)?;
    let positions: Vec<usize> = (0..s).collect();
    let pe = g.gather_rows(pos_emb, &positions)?;
    let mut x = g.add(te, pe)?;

    for layer in 0..cfg.n_layers {
        let ln1g = node(nodes, &format!("layer.{layer}.ln1.gain"))?;
        let ln1b = node(nodes, &format!("layer.{layer}.ln1.bias"))?;
        let h = g.layer_norm(x, ln1g, ln1b)?;
        let q = project(g, nodes, h, layer, "q", attach.lora)?;
        let k = project(g, nodes, h, layer, "k", attach.lora)?;
        let v = project(g, nodes, h, layer, "v", attach.lora)?;

        let prefix = if attach.prefix_len > 0 {
            Some((
                node(nodes, &prefix_param_name(layer, "k"))?,
                node(nodes, &prefix_param_name(layer, "v"))?,
            ))
        } else {
            None
        };

        let mut head_outs = Vec::with_capacity(cfg.n_heads);
        for head in 0..cfg.n_heads {
            let qh = g.slice_cols(q, head * dh, dh)?;
            let mut kh = g.slice_cols(k, head * dh, dh)?;
            let mut vh = g.slice_cols(v, head * dh, dh)?;
            if let Some((pk, pv)) = prefix {
                let pkh = g.slice_cols(pk, head * dh, dh)?;
                let pvh = g.slice_cols(pv, head * dh, dh)?;
                kh = g.concat_rows(&[pkh, kh])?;
                vh = g.concat_rows(&[pvh, vh])?;
            }
            let scores = g.matmul_nt(qh, kh)?;
            let scaled = g.scale(scores, 1.0 / (dh as f32).sqrt());
            let attn = g.softmax_rows(scaled)?;
            head_outs.push(g.matmul(attn, vh)?);
        }
        let merged = g.concat_cols(&head_outs)?;
        let o = project(g, nodes, merged, layer, "o", None)?;
        x = g.add(x, o)?;

        let ln2g = node(nodes, &format!("layer.{layer}.ln2.gain"))?;
        let ln2b = node(nodes, &format!("layer.{layer}.ln2.bias"))?;
        let h2 = g.layer_norm(x, ln2g, ln2b)?;
        let w1 = node(nodes, &format!("layer.{layer}.ffn.w1.weight"))?;
        let b1 = node(nodes, &format!("layer.{layer}.ffn.w1.bias"))?;
        let w2 = node(nodes, &format!("layer.{layer}.ffn.w2.weight"))?;
        let b2 = node(nodes, &format!("layer.{layer}.ffn.w2.bias"))?;
        let f = g.matmul(h2, w1)?;
        let f = g.add_row_bias(f, b1)?;
        let f = g.gelu(f);
        let f = g.matmul(f, w2)?;
        let f = g.add_row_bias(f, b2)?;
        x = g.add(x, f)?;
    }
    let lng = node(nodes, "final_ln.gain")?;
    let lnb = node(nodes, "final_ln.bias")?;
    g.layer_norm(x, lng, lnb)
}

/// Pooled features (position-0 hidden state) for a batch, [b, d_model].
pub fn forward_features(
    g: &mut Graph,
    nodes: &NodeMap,
    cfg: &BackboneConfig,
    tokens: &[Vec<usize>],
    attach: ForwardAttach,
) -> Result<NodeId> {
    let mut pooled = Vec::with_capacity(tokens.len());
    for seq in tokens {
        let hidden = encode(g, nodes, cfg, seq, attach)?;
        pooled.push(g.gather_rows(hidden, &[0])?);
    }
    g.concat_rows(&pooled)
}

/// One masked-prediction example: tokens already carry the mask id at the
/// listed positions; `original_ids` are the pre-mask tokens there.
#[derive(Debug, Clone)]
pub struct MlmExample {
    pub tokens: Vec<usize>,
    pub mask_positions: Vec<usize>,
    pub original_ids: Vec<usize>,
}

/// Cross-entropy over masked positions only, averaged across the batch.
pub fn forward_mlm_loss(
    g: &mut Graph,
    nodes: &NodeMap,
    cfg: &BackboneConfig,
    batch: &[MlmExample],
    attach: ForwardAttach,
) -> Result<NodeId> {
    let total_masked: usize = batch.iter().map(|e| e.mask_positions.len()).sum();
    if total_masked == 0 {
        return Err(EhError::Contract("mlm loss over an empty mask set".into()));
    }
    let w = node(nodes, "mlm.weight")?;
    let b = node(nodes, "mlm.bias")?;
    let mut logit_parts = Vec::new();
    let mut labels = Vec::with_capacity(total_masked);
    for ex in batch {
        if ex.mask_positions.len() != ex.original_ids.len() {
            return Err(EhError::Contract("mask_positions/original_ids length mismatch".into()));
        }
        if ex.mask_positions.is_empty() {
            continue;
        }
        if let Some(&p) = ex.mask_positions.iter().find(|&&p| p >= ex.tokens.len()) {
            return Err(EhError::Index(format!("mask position {p} out of sequence")));
        }
        let hidden = encode(g, nodes, cfg, &ex.tokens, attach)?;
        let rows = g.gather_rows(hidden, &ex.mask_positions)?;
        let logits = g.matmul(rows, w)?;
        logit_parts.push(g.add_row_bias(logits, b)?);
        labels.extend_from_slice(&ex.original_ids);
    }
    let all = g.concat_rows(&logit_parts)?;
    g.cross_entropy(all, &labels)
}
