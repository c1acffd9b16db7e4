use indexmap::IndexMap;
use rand::Rng;

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{shape_err, Result};

/// Named parameter tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: IndexMap<String, Tensor>,
}

/// Graph leaves for every tensor of a [`ParamSet`], in the same order.
#[derive(Clone, Debug)]
pub struct Bound {
    ids: Vec<NodeId>,
    names: IndexMap<String, usize>,
}

impl Bound {
    pub fn get(&self, name: &str) -> NodeId {
        match self.names.get(name) {
            Some(&i) => self.ids[i],
            None => panic!("parameter `{name}` not bound"),
        }
    }

    pub fn try_get(&self, name: &str) -> Option<NodeId> {
        self.names.get(name).map(|&i| self.ids[i])
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    /// Same names bound to other nodes, e.g. parameters plus a fixed offset.
    pub fn map(&self, mut f: impl FnMut(&str, NodeId) -> NodeId) -> Bound {
        let ids = self
            .names
            .iter()
            .map(|(name, &i)| f(name, self.ids[i]))
            .collect();
        Bound {
            ids,
            names: self.names.clone(),
        }
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a tensor.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
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

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Copies every tensor from `other` into `self`, replacing same-named entries.
    pub fn extend(&mut self, other: ParamSet) {
        for (k, v) in other.tensors {
            self.tensors.insert(k, v);
        }
    }

    /// Sub-set of the tensors whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Pushes every tensor onto the graph as a leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let mut ids = Vec::with_capacity(self.tensors.len());
        let mut names = IndexMap::with_capacity(self.tensors.len());
        for (i, (k, v)) in self.tensors.iter().enumerate() {
            ids.push(g.leaf(v.clone()));
            names.insert(k.clone(), i);
        }
        Bound { ids, names }
    }

    /// Gradients of the bound leaves, zeros where nothing flowed.
    pub fn grads(&self, g: &Graph, bound: &Bound) -> Vec<Tensor> {
        bound.ids.iter().map(|id| g.grad_or_zeros(*id)).collect()
    }

    /// Flattens every tensor in order into one vector.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        for t in self.tensors.values() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`ParamSet::flatten`] for a set with the same layout.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.count() {
            return Err(shape_err("ParamSet::assign_flat", self.count(), flat.len()));
        }
        let mut off = 0;
        for t in self.tensors.values_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}

/// Uniform Glorot initialisation in `+-sqrt(6 / (fan_in + fan_out))`, scaled by `gain`.
pub fn glorot<R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    gain: f64,
) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() * gain;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}
