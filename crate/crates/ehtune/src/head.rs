//! 2-layer MLP classification head with tanh between layers. The head is
//! the object the two-stage trainer transplants: stage 1 trains it, stage 2
//! starts from it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::NodeMap;
use crate::error::{EhError, Result};
use crate::numcore::{Graph, NodeId, ParamStore, Tensor};

pub const W1: &str = "head.w1.weight";
pub const B1: &str = "head.w1.bias";
pub const W2: &str = "head.w2.weight";
pub const B2: &str = "head.w2.bias";

#[derive(Debug, Clone)]
pub struct Head {
    pub d_model: usize,
    pub d_mid: usize,
    pub n_classes: usize,
    pub params: ParamStore,
}

impl Head {
    pub fn build(d_model: usize, d_mid: usize, n_classes: usize, seed: u64) -> Result<Head> {
        if d_model == 0 || d_mid == 0 || n_classes == 0 {
            return Err(EhError::Config("head dims must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        p.insert(W1, Tensor::randn(vec![d_model, d_mid], crate::backbone::INIT_STD, &mut rng));
        p.insert(B1, Tensor::zeros(vec![d_mid]));
        p.insert(W2, Tensor::randn(vec![d_mid, n_classes], crate::backbone::INIT_STD, &mut rng));
        p.insert(B2, Tensor::zeros(vec![n_classes]));
        Ok(Head { d_model, d_mid, n_classes, params: p })
    }

    pub fn param_count(&self) -> usize {
        self.params.num_params()
    }

    /// Install another head's parameters; dims must match exactly.
    pub fn transplant_from(&mut self, other: &Head) -> Result<()> {
        if (self.d_model, self.d_mid, self.n_classes)
            != (other.d_model, other.d_mid, other.n_classes)
        {
            return Err(EhError::Config(format!(
                "head transplant dims ({}, {}, {}) vs ({}, {}, {})",
                self.d_model, self.d_mid, self.n_classes,
                other.d_model, other.d_mid, other.n_classes
            )));
        }
        self.params.copy_from(&other.params)
    }

    /// Non-training convenience forward.
    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let nodes = self.params.register(&mut g, false);
        let f = g.leaf(features, false);
        let out = forward_logits(&mut g, &nodes, f)?;
        Ok(g.value(out).clone())
    }
}

/// tanh(x·W1 + b1), the projection-plot input.
pub fn mid_features(g: &mut Graph, nodes: &NodeMap, features: NodeId) -> Result<NodeId> {
    let h = g.matmul(features, nodes[W1])?;
    let h = g.add_row_bias(h, nodes[B1])?;
    Ok(g.tanh(h))
}

/// mid·W2 + b2.
pub fn forward_logits(g: &mut Graph, nodes: &NodeMap, features: NodeId) -> Result<NodeId> {
    let mid = mid_features(g, nodes, features)?;
    let o = g.matmul(mid, nodes[W2])?;
    g.add_row_bias(o, nodes[B2])
}
