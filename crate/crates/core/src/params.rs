//! Named parameter storage and the binding of parameters into a [`Graph`].

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered map from parameter name to tensor. Iteration order is the
/// lexicographic name order, which fixes checkpoint layout and the order
/// of every reduction over parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

/// Round to the nearest f32. Stored parameters are always f32-representable
/// so that checkpoints hold them exactly.
pub fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Parameters whose name starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a String, &'a Tensor)> {
        self.tensors.iter().filter(move |(k, _)| k.starts_with(prefix))
    }

    pub fn remove_prefix(&mut self, prefix: &str) {
        self.tensors.retain(|k, _| !k.starts_with(prefix));
    }

    /// Copy every tensor of `other` whose name starts with `prefix`.
    pub fn merge_prefix(&mut self, other: &ModelParams, prefix: &str) {
        for (k, v) in other.with_prefix(prefix) {
            self.tensors.insert(k.clone(), v.clone());
        }
    }

    /// FNV-1a over names, shapes and f32 bit patterns of the tensors under
    /// `prefix`. Used to assert that frozen sub-networks never change.
    pub fn fingerprint(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (k, v) in self.with_prefix(prefix) {
            eat(k.as_bytes());
            for &d in v.shape() {
                eat(&(d as u64).to_le_bytes());
            }
            for &x in v.data() {
                eat(&x.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Parameter initialisers. Values are rounded to f32.
pub(crate) struct Init<'a> {
    pub params: &'a mut ModelParams,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        Tensor::from_fn(shape, |_| round_f32(self.rng.gen_range(-bound..=bound)))
    }

    /// Convolution weight `[cout, cin, k, k]` (and optional bias) with the
    /// usual `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation.
    pub fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize, bias: bool) {
        let bound = 1.0 / libm::sqrt((cin * k * k) as f64);
        let w = self.uniform(&[cout, cin, k, k], bound);
        self.params.insert(alloc::format!("{name}.weight"), w);
        if bias {
            let b = self.uniform(&[cout], bound);
            self.params.insert(alloc::format!("{name}.bias"), b);
        }
    }

    pub fn depthwise(&mut self, name: &str, c: usize, k: usize, bias: bool) {
        let bound = 1.0 / libm::sqrt((k * k) as f64);
        let w = self.uniform(&[c, 1, k, k], bound);
        self.params.insert(alloc::format!("{name}.weight"), w);
        if bias {
            let b = self.uniform(&[c], bound);
            self.params.insert(alloc::format!("{name}.bias"), b);
        }
    }

    pub fn layer_norm(&mut self, name: &str, c: usize) {
        self.params
            .insert(alloc::format!("{name}.weight"), Tensor::full(&[c], 1.0));
        self.params
            .insert(alloc::format!("{name}.bias"), Tensor::zeros(&[c]));
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) {
        self.params.insert(name, Tensor::full(shape, round_f32(value)));
    }
}

/// A graph plus the parameters bound into it. Each parameter is bound at
/// most once, so weights shared between the two views accumulate a single
/// gradient.
pub struct Session<'p> {
    pub graph: Graph,
    params: &'p ModelParams,
    bound: BTreeMap<&'p str, Var>,
    trainable: fn(&str) -> bool,
}

impl Deref for Session<'_> {
    type Target = Graph;
    fn deref(&self) -> &Graph {
        &self.graph
    }
}

impl DerefMut for Session<'_> {
    fn deref_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }
}

impl<'p> Session<'p> {
    /// Every bound parameter receives gradients.
    pub fn new(params: &'p ModelParams) -> Self {
        Self::with_trainable(params, |_| true)
    }

    /// No parameter receives gradients; for inference.
    pub fn frozen(params: &'p ModelParams) -> Self {
        Self::with_trainable(params, |_| false)
    }

    pub fn with_trainable(params: &'p ModelParams, trainable: fn(&str) -> bool) -> Self {
        Self {
            graph: Graph::new(),
            params,
            bound: BTreeMap::new(),
            trainable,
        }
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    /// Bind parameter `name` as a graph leaf.
    pub fn p(&mut self, name: &str) -> Result<Var> {
        let (key, t) = self
            .params
            .tensors
            .get_key_value(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if let Some(&v) = self.bound.get(key.as_str()) {
            return Ok(v);
        }
        let v = self.graph.leaf(t.clone(), (self.trainable)(key));
        self.bound.insert(key.as_str(), v);
        Ok(v)
    }

    /// Like [`Session::p`] for an optional parameter.
    pub fn p_opt(&mut self, name: &str) -> Result<Option<Var>> {
        if self.params.contains(name) {
            self.p(name).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    /// Backward from `loss`, returning gradients of trainable bound
    /// parameters by name.
    pub fn param_grads(&self, loss: Var) -> BTreeMap<String, Tensor> {
        let mut grads = self.graph.backward(loss);
        self.collect(&mut grads)
    }

    fn collect(&self, grads: &mut Gradients) -> BTreeMap<String, Tensor> {
        self.bound
            .iter()
            .filter_map(|(&name, &v)| grads.take(v).map(|g| (name.to_string(), g)))
            .collect()
    }

    /// Names of the parameters bound so far.
    pub fn bound_names(&self) -> Vec<&'p str> {
        self.bound.keys().copied().collect()
    }
}
