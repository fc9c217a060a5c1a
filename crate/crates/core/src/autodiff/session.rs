use std::collections::HashMap;
use std::ops::{Deref, DerefMut};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// A [`Graph`] plus the leaves created for model parameters.
///
/// Parameters are bound by address, so each parameter tensor becomes exactly
/// one leaf per session no matter how many times a forward pass touches it.
/// The tensors must stay borrowed (and therefore unmoved) for the lifetime of
/// the session.
#[derive(Default)]
pub struct Session {
    graph: Graph,
    params: HashMap<usize, Var>,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(t: &Tensor) -> usize {
        std::ptr::from_ref(t) as usize
    }

    pub fn param(&mut self, t: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&Self::key(t)) {
            return v;
        }
        let v = self.graph.leaf(t.clone());
        self.params.insert(Self::key(t), v);
        v
    }

    /// The leaf bound to `t`, if the forward pass used it.
    pub fn bound(&self, t: &Tensor) -> Option<Var> {
        self.params.get(&Self::key(t)).copied()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }
}

impl Deref for Session {
    type Target = Graph;
    fn deref(&self) -> &Graph {
        &self.graph
    }
}

impl DerefMut for Session {
    fn deref_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }
}
