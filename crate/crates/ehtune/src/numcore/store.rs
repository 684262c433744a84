use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{EhError, Result};

use super::{Graph, NodeId, Tensor};

/// Ordered map from hierarchical parameter name ("layer.0.attn.q.weight")
/// to tensor. Insertion order is the canonical iteration order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    entries: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| EhError::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| EhError::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total element count over all tensors.
    pub fn num_params(&self) -> usize {
        self.entries.values().map(|t| t.numel()).sum()
    }

    /// Copy every tensor of `src` into this store. Existing names are
    /// overwritten only when shapes match.
    pub fn copy_from(&mut self, src: &ParamStore) -> Result<()> {
        for (name, t) in src.iter() {
            match self.entries.get_mut(name) {
                Some(dst) if dst.shape() == t.shape() => {
                    dst.data_mut().copy_from_slice(t.data());
                }
                Some(dst) => {
                    return Err(EhError::Checkpoint(format!(
                        "parameter {name:?}: shape {:?} vs {:?}",
                        dst.shape(),
                        t.shape()
                    )));
                }
                None => {
                    return Err(EhError::Checkpoint(format!("parameter {name:?} missing in target")));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over (name, shape, little-endian f32 bytes) of the selected
    /// tensors, in sorted name order. Used to prove frozen tensors never move.
    pub fn digest<'a>(&self, names: impl Iterator<Item = &'a str>) -> [u8; 32] {
        let mut sorted: Vec<&str> = names.collect();
        sorted.sort_unstable();
        let mut h = Sha256::new();
        for name in sorted {
            if let Ok(t) = self.get(name) {
                h.update(name.as_bytes());
                for d in t.shape() {
                    h.update((*d as u64).to_le_bytes());
                }
                for v in t.data() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        h.finalize().into()
    }

    pub fn digest_all(&self) -> [u8; 32] {
        self.digest(self.names())
    }

    /// Register every tensor on a graph; returns the name→node map used by
    /// forward builders.
    pub fn register(&self, g: &mut Graph, requires_grad: bool) -> IndexMap<String, NodeId> {
        let mut map = IndexMap::with_capacity(self.entries.len());
        for (name, t) in self.iter() {
            map.insert(name.to_string(), g.leaf(t, requires_grad));
        }
        map
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_detects_single_element_change() {
        let mut s = ParamStore::new();
        s.insert("a.weight", Tensor::zeros(vec![2, 2]));
        s.insert("a.bias", Tensor::zeros(vec![2]));
        let d0 = s.digest_all();
        assert_eq!(d0, s.digest_all());
        s.get_mut("a.bias").unwrap().data_mut()[1] = 1e-7;
        assert_ne!(d0, s.digest_all());
    }

    #[test]
    fn digest_is_order_insensitive() {
        let mut a = ParamStore::new();
        a.insert("x", Tensor::ones(vec![2]));
        a.insert("y", Tensor::zeros(vec![3]));
        let mut b = ParamStore::new();
        b.insert("y", Tensor::zeros(vec![3]));
        b.insert("x", Tensor::ones(vec![2]));
        assert_eq!(a.digest_all(), b.digest_all());
    }

    #[test]
    fn copy_from_rejects_shape_mismatch() {
        let mut a = ParamStore::new();
        a.insert("w", Tensor::zeros(vec![2, 2]));
        let mut b = ParamStore::new();
        b.insert("w", Tensor::ones(vec![2, 3]));
        assert!(a.copy_from(&b).is_err());
    }
}
