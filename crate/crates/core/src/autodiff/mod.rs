//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor)
//! expression graphs.
//!
//! Graphs are built from [`Expr`] handles whose leaves are named inputs or
//! parameters, then evaluated against [`Bindings`]. Values are 64-bit and
//! every reduction runs in a fixed order, so repeated evaluations are
//! bit-identical.
//!
//! ```
//! use penh::autodiff::{gradient, Bindings, Expr};
//! use penh::Tensor;
//!
//! let a = Expr::parameter("a");
//! let root = a.square().sum();
//! let b = Bindings::new().with("a", Tensor::vector(&[3.0]));
//! assert_eq!(gradient(&root, &b).unwrap()["a"].data(), &[6.0]);
//! ```

mod check;
mod eval;
mod expr;

pub use check::grad_check;
pub use eval::{evaluate, gradient, value_and_gradient, Bindings, Evaluation, Gradients};
pub use expr::{Expr, Op};
