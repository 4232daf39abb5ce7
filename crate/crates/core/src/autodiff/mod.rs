//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records operations as they are applied. Calling
//! [`Graph::backward`] on a scalar node walks the recording in reverse and
//! accumulates vector-Jacobian products into every node that requires
//! gradients. The gradient reversal node ([`OpKind::Grl`]) is the identity on
//! the way forward and negates (and scales) the upstream gradient on the way
//! back, which is how a single minimized objective encodes a min-max game.
//!
//! ```
//! use dfda::autodiff::{Graph, GrlConfig, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::vector(vec![2.0, 3.0]));
//! let r = g.grl(x, GrlConfig::new(1.0).unwrap()).unwrap();
//! let s = g.sum(r).unwrap();
//! g.backward(s).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[-1.0, -1.0]);
//! ```

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{finite_difference_check, finite_difference_check_many, GradCheckReport};
pub use graph::{Graph, GrlConfig, NodeId, OpKind};
pub(crate) use graph::normal_cdf;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op} received {got} inputs")]
    Arity { op: &'static str, got: usize },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} values")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("function evaluation was not finite ({value}) at coordinate {coordinate}")]
    NonFinite { coordinate: usize, value: f64 },
}
