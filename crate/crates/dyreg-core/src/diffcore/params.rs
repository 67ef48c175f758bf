//! Named parameter storage with deterministic iteration order.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};

/// Map from dot-separated parameter path to its tensor.
///
/// Iteration is lexicographic by path, stable across runs; gradient vectors
/// and optimizer state align with that order.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor<T>) {
        let path = path.into();
        assert!(
            self.map.insert(path.clone(), tensor).is_none(),
            "duplicate parameter path {path}"
        );
    }

    pub fn get(&self, path: &str) -> &Tensor<T> {
        self.map
            .get(path)
            .unwrap_or_else(|| panic!("unknown parameter path {path}"))
    }

    pub fn get_mut(&mut self, path: &str) -> &mut Tensor<T> {
        self.map
            .get_mut(path)
            .unwrap_or_else(|| panic!("unknown parameter path {path}"))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.map.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.map.iter_mut()
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar parameter count.
    pub fn count_scalars(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    pub fn to_f64(&self) -> ParamStore<f64> {
        ParamStore {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), v.to_f64()))
                .collect(),
        }
    }
}

/// Deterministic parameter initializer.
///
/// All draws happen in `f64` and are converted, so a given seed produces the
/// same parameter sequence whatever the model's scalar type.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn uniform<T: Real>(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(self.rng.random_range(-bound..bound)))
            .collect();
        Tensor::from_vec(shape, data)
    }

    /// Fan-in-scaled uniform used for conv and linear weights; the bound
    /// keeps layer output variance at 2/fan_in under relu.
    pub fn fan_in<T: Real>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        self.uniform(shape, (6.0 / fan_in.max(1) as f64).sqrt())
    }

    /// Plain scaled uniform used for recurrent weights.
    pub fn scaled<T: Real>(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        self.uniform(shape, bound)
    }
}

/// Binds store parameters onto a tape for one forward pass, remembering
/// which tape node each path landed on so gradients can be read back in
/// store order.
pub struct Binding<'a, T: Real> {
    tape: Tape<T>,
    store: &'a ParamStore<T>,
    bound: BTreeMap<String, Var<T>>,
}

impl<'a, T: Real> Binding<'a, T> {
    pub fn new(tape: &Tape<T>, store: &'a ParamStore<T>) -> Self {
        Binding { tape: tape.clone(), store, bound: BTreeMap::new() }
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    /// Tape leaf for the parameter at `path`, created on first use.
    pub fn leaf(&mut self, path: &str) -> Var<T> {
        if let Some(v) = self.bound.get(path) {
            return v.clone();
        }
        let var = self.tape.leaf(self.store.get(path).clone());
        self.bound.insert(path.to_string(), var.clone());
        var
    }

    /// Gradients for every store parameter, in store iteration order.
    /// Parameters that never touched the tape get zero gradients.
    pub fn gradients(&self) -> Gradients<T> {
        let mut map = BTreeMap::new();
        for (path, tensor) in self.store.iter() {
            let grad = self
                .bound
                .get(path)
                .and_then(|v| self.tape.grad(v))
                .unwrap_or_else(|| Tensor::zeros(tensor.shape()));
            map.insert(path.clone(), grad);
        }
        Gradients { map }
    }
}

/// Gradients keyed like the [`ParamStore`] they came from.
pub struct Gradients<T> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Gradients {
            map: store
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn get(&self, path: &str) -> &Tensor<T> {
        self.map
            .get(path)
            .unwrap_or_else(|| panic!("no gradient for path {path}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    /// `self += other`, shape-checked.
    pub fn add_assign(&mut self, other: &Gradients<T>) {
        assert_eq!(self.map.len(), other.map.len(), "gradient stores misaligned");
        for ((ka, ta), (kb, tb)) in self.map.iter_mut().zip(other.map.iter()) {
            assert_eq!(ka, kb, "gradient stores misaligned: {ka} vs {kb}");
            assert_eq!(ta.shape(), tb.shape());
            for (a, &b) in ta.data_mut().iter_mut().zip(tb.data()) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.map.values_mut() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }
}
