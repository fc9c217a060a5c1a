//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every primitive applied to its nodes; calling
//! [`Graph::backward`] on a scalar node walks the recording in reverse and
//! returns the gradient of that scalar with respect to every node.
//!
//! ```
//! use mxctc::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).item(), 6.0);
//! ```

mod functional;
mod graph;
mod session;
mod tensor;

pub use functional::{layer_norm, log_softmax, log_sum_exp, sigmoid, softmax, LAYER_NORM_EPS};
pub use graph::{Gradients, Graph, Primitive, Var};
pub use session::Session;
pub use tensor::Tensor;

/// Half-width of the uniform parameter initialization.
pub const INIT_SCALE: f64 = 0.05;
