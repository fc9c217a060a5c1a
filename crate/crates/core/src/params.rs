//! Named parameter tensors and the affine layer shared by several modules.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{Session, Tensor, Var, INIT_SCALE};
use crate::error::{Error, Result};

/// Anything owning trainable tensors under stable names.
pub trait Parameterized {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}/{name}")
    }
}

/// Ordered name -> tensor table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn collect(model: &dyn Parameterized) -> Self {
        let mut store = Self::new();
        model.visit("", &mut |name, t| {
            store.tensors.insert(name.to_string(), t.clone());
        });
        store
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
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

    /// Overwrites every tensor of `model` with the stored tensor of the same
    /// name. Missing names and shape differences are errors.
    pub fn load_into(&self, model: &mut dyn Parameterized) -> Result<()> {
        let mut err = None;
        let mut used = 0;
        model.visit_mut("", &mut |name, t| {
            if err.is_some() {
                return;
            }
            match self.tensors.get(name) {
                Some(src) if src.shape() == t.shape() => {
                    *t = src.clone();
                    used += 1;
                }
                Some(src) => {
                    err = Some(Error::Config(format!(
                        "tensor {name}: stored shape {:?}, model expects {:?}",
                        src.shape(),
                        t.shape()
                    )))
                }
                None => err = Some(Error::Config(format!("tensor {name} missing from store"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if used != self.tensors.len() {
            return Err(Error::Config(format!(
                "store holds {} tensors but the model uses {used}",
                self.tensors.len()
            )));
        }
        Ok(())
    }
}

/// Affine map `y = W x + b` with `W: [out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::uniform(&[output, input], INIT_SCALE, rng),
            bias: Tensor::uniform(&[output], INIT_SCALE, rng),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Applies to a vector `[in]` or to each row of a matrix `[rows, in]`.
    pub fn apply(&self, sess: &mut Session, x: Var) -> Result<Var> {
        let w = sess.param(&self.weight);
        let b = sess.param(&self.bias);
        let y = if sess.shape(x).len() == 1 {
            sess.matmul(w, x)?
        } else {
            let wt = sess.transpose(w)?;
            sess.matmul(x, wt)?
        };
        sess.add(y, b)
    }
}

impl Parameterized for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "W"), &self.weight);
        f(&join(prefix, "b"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "W"), &mut self.weight);
        f(&join(prefix, "b"), &mut self.bias);
    }
}
