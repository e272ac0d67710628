//! Named parameter storage and per-step tape binding.
//!
//! Parameters live outside any tape in a [`ParamStore`] keyed by name
//! (BTreeMap, so every iteration over parameters is deterministic). Each
//! forward pass opens a [`Session`] that copies parameters onto its tape on
//! first use; after `backward`, [`Session::collect_grads`] pulls gradients
//! back out keyed by the same names. Parameters never bound during a step
//! (e.g. the graph encoder in a `use_graph = false` ablation) simply produce
//! no gradient entry and are left untouched by the optimizer.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, TensorId};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub data: Vec<f32>,
    pub shape: Vec<usize>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, data: Vec<f32>, shape: Vec<usize>) {
        assert_eq!(data.len(), shape.iter().product::<usize>());
        let prev = self.map.insert(name.into(), Param { data, shape });
        assert!(prev.is_none(), "duplicate parameter name");
    }

    /// Xavier-uniform initialized matrix `[fan_in, fan_out]`.
    pub fn insert_xavier<R: Rng>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) {
        let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        self.insert(name, data, vec![fan_in, fan_out]);
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) {
        let n = shape.iter().product();
        self.insert(name, vec![0.0; n], shape);
    }

    pub fn insert_ones(&mut self, name: impl Into<String>, shape: Vec<usize>) {
        let n = shape.iter().product();
        self.insert(name, vec![1.0; n], shape);
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.map
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Deterministic (name-sorted) iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.map.iter_mut()
    }

    pub fn total_numel(&self) -> usize {
        self.map.values().map(|p| p.numel()).sum()
    }
}

/// One forward/backward pass: a tape plus the set of parameters bound to it.
pub struct Session<'p> {
    pub tape: Tape,
    store: &'p ParamStore,
    bound: BTreeMap<String, TensorId>,
}

impl<'p> Session<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Session {
            tape: Tape::new(),
            store,
            bound: BTreeMap::new(),
        }
    }

    /// Tape id of a named parameter, binding it as a leaf on first use.
    pub fn param(&mut self, name: &str) -> Result<TensorId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let p = self.store.get(name)?;
        let id = self.tape.leaf(p.data.clone(), p.shape.clone(), true);
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Gradients of every parameter bound during this session, by name.
    /// Parameters the loss never reached get a zero gradient.
    pub fn collect_grads(&self) -> BTreeMap<String, Vec<f32>> {
        let mut out = BTreeMap::new();
        for (name, &id) in &self.bound {
            let numel = self.tape.value(id).numel();
            let g = self
                .tape
                .grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; numel]);
            out.insert(name.clone(), g);
        }
        out
    }

    pub fn bound_names(&self) -> impl Iterator<Item = &String> {
        self.bound.keys()
    }
}
