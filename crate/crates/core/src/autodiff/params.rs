use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors, grouped into networks by the name prefix before
/// the first `.` (e.g. `sh_enc_x.conv1.w` belongs to network `sh_enc_x`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
    frozen: BTreeSet<String>,
}

pub fn network_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Distinct network prefixes, sorted.
    pub fn networks(&self) -> BTreeSet<String> {
        self.tensors.keys().map(|k| network_of(k).to_string()).collect()
    }

    pub fn freeze(&mut self, network: &str) {
        self.frozen.insert(network.to_string());
    }

    pub fn unfreeze(&mut self, network: &str) {
        self.frozen.remove(network);
    }

    pub fn frozen(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(network_of(name))
    }

    /// SHA-256 over names, extents and raw bytes of one network's tensors.
    pub fn checksum(&self, network: &str) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.tensors.iter().filter(|(n, _)| network_of(n) == network) {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn num_values(&self, network: &str) -> usize {
        self.tensors
            .iter()
            .filter(|(n, _)| network_of(n) == network)
            .map(|(_, t)| t.numel())
            .sum()
    }
}

/// A forward pass bound to a [`ParamStore`].
///
/// Parameters are inserted into the graph on first use. Only parameters of
/// the `trainable` networks that are not frozen in the store become
/// gradient-tracking leaves; everything else enters as a constant.
pub struct Session<'p> {
    pub g: Graph,
    store: &'p ParamStore,
    trainable: BTreeSet<String>,
    bound: BTreeMap<String, Var>,
}

impl<'p> Session<'p> {
    pub fn new(store: &'p ParamStore, trainable: &[&str]) -> Self {
        Session {
            g: Graph::new(),
            store,
            trainable: trainable.iter().map(|s| s.to_string()).collect(),
            bound: BTreeMap::new(),
        }
    }

    /// A session where every parameter is a constant.
    pub fn inference(store: &'p ParamStore) -> Self {
        Self::new(store, &[])
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.contains(network_of(name)) && !self.store.is_frozen(name)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = self
            .store
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?
            .clone();
        let v = self.g.leaf(value, self.is_trainable(name))?;
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.bound.iter()
    }

    /// Runs backward and returns gradients of the trainable bound parameters.
    pub fn backward(&mut self, loss: Var) -> Result<BTreeMap<String, Tensor>> {
        let mut grads = self.g.backward(loss)?;
        let mut out = BTreeMap::new();
        for (name, &v) in &self.bound {
            if self.trainable.contains(network_of(name)) && !self.store.is_frozen(name) {
                if let Some(t) = grads.take(v) {
                    out.insert(name.clone(), t);
                }
            }
        }
        Ok(out)
    }

    /// Runs backward and returns the gradient of every bound parameter,
    /// zero arrays for the ones that were not trainable.
    pub fn backward_all(&mut self, loss: Var) -> Result<BTreeMap<String, Tensor>> {
        let mut grads = self.g.backward(loss)?;
        let mut out = BTreeMap::new();
        for (name, &v) in &self.bound {
            let shape = self.g.shape(v).to_vec();
            let t = grads.take(v).unwrap_or_else(|| Tensor::zeros(&shape));
            out.insert(name.clone(), t);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_networks_bind_as_constants() {
        let mut store = ParamStore::new();
        store.insert("a.w", Tensor::from_vec(vec![1.0, 2.0]));
        store.insert("b.w", Tensor::from_vec(vec![3.0, 4.0]));
        store.freeze("b");
        let mut s = Session::new(&store, &["a", "b"]);
        let a = s.param("a.w").unwrap();
        let b = s.param("b.w").unwrap();
        assert!(s.g.requires_grad(a));
        assert!(!s.g.requires_grad(b));
        let p = s.g.mul(a, b).unwrap();
        let l = s.g.mean_all(p).unwrap();
        let grads = s.backward_all(l).unwrap();
        assert_eq!(grads["a.w"].data(), &[1.5, 2.0]);
        assert_eq!(grads["b.w"].data(), &[0.0, 0.0]);
    }

    #[test]
    fn checksum_tracks_network_contents() {
        let mut store = ParamStore::new();
        store.insert("a.w", Tensor::from_vec(vec![1.0]));
        store.insert("b.w", Tensor::from_vec(vec![1.0]));
        let before = store.checksum("a");
        store.get_mut("b.w").unwrap().data_mut()[0] = 5.0;
        assert_eq!(before, store.checksum("a"));
        store.get_mut("a.w").unwrap().data_mut()[0] = 5.0;
        assert_ne!(before, store.checksum("a"));
    }
}
