use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensorcore::{Gradients, Graph, Tensor, Var};

/// Ordered collection of named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, mut t: Tensor) {
        let name = name.into();
        t.set_requires_grad(true);
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = t,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, t));
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::Lookup(format!("parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].1),
            None => Err(Error::Lookup(format!("parameter `{name}`"))),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.entries.iter_mut().for_each(|(_, t)| t.zero_grad());
    }

    /// Copies the named subset into a new set, preserving order.
    pub fn subset<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Result<ParamSet> {
        let wanted: std::collections::HashSet<&str> = names.into_iter().collect();
        let mut out = ParamSet::new();
        for (n, t) in &self.entries {
            if wanted.contains(n.as_str()) {
                out.insert(n.clone(), t.detached());
            }
        }
        if out.len() != wanted.len() {
            let missing: Vec<_> = wanted.iter().filter(|n| !self.contains(n)).collect();
            return Err(Error::Lookup(format!("parameters {missing:?}")));
        }
        Ok(out)
    }
}

/// Lazily registers parameters as graph leaves, once per graph.
#[derive(Debug, Default)]
pub struct Binder {
    bound: Vec<(String, Var)>,
    lookup: HashMap<String, Var>,
}

impl Binder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, graph: &mut Graph, params: &ParamSet, name: &str) -> Result<Var> {
        if let Some(&v) = self.lookup.get(name) {
            return Ok(v);
        }
        let v = graph.leaf(params.get(name)?);
        self.lookup.insert(name.to_string(), v);
        self.bound.push((name.to_string(), v));
        Ok(v)
    }

    /// Names bound so far, in binding order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.bound.iter().map(|(n, _)| n.as_str())
    }

    /// Adds each bound parameter's gradient into its tensor. Returns the names touched.
    pub fn accumulate(&self, grads: &Gradients, params: &mut ParamSet) -> Result<Vec<String>> {
        let mut touched = Vec::with_capacity(self.bound.len());
        for (name, v) in &self.bound {
            let t = params.get_mut(name)?;
            match grads.get(*v) {
                Some(g) => t.accumulate_grad(g)?,
                None => t.accumulate_grad(&vec![0.0; t.numel()])?,
            }
            touched.push(name.clone());
        }
        Ok(touched)
    }
}
