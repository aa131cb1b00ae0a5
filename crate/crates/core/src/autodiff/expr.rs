use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::nn::conv::{ConvSpec, PaddingMode};
use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Operation of one expression node.
#[derive(Clone, Debug)]
pub enum Op {
    /// Named leaf that is never differentiated.
    Input(String),
    /// Named leaf whose gradient is reported by [`gradient`](super::gradient).
    Parameter(String),
    Constant(Tensor),
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    Abs,
    /// Elementwise Huber function with the given threshold.
    Huber(f64),
    Sum,
    Mean,
    /// Running sum along a vector.
    Cumsum,
    Softmax,
    LeakyRelu(f64),
    GlobalAvgPool,
    /// Operands `[x, weights, bias]`.
    FullyConnected,
    /// Operands `[x, weights, bias]`.
    Conv2d(ConvSpec),
    Pad { margin_h: usize, margin_w: usize, mode: PaddingMode },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Parameter(_) => "parameter",
            Op::Constant(_) => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Abs => "abs",
            Op::Huber(_) => "huber",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Cumsum => "cumsum",
            Op::Softmax => "softmax",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::GlobalAvgPool => "global_average_pool",
            Op::FullyConnected => "fully_connected",
            Op::Conv2d(_) => "conv2d",
            Op::Pad { .. } => "pad",
        }
    }
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) op: Op,
    pub(crate) operands: Vec<Expr>,
}

/// Immutable handle to a node of an acyclic expression graph.
///
/// Cloning is cheap and shares the node; a node used by several parents is
/// evaluated once per evaluation.
#[derive(Clone)]
pub struct Expr(pub(crate) Arc<Node>);

impl Expr {
    fn node(op: Op, operands: Vec<Expr>) -> Expr {
        let id = NEXT_ID.fetch_add(1, Ordering::Relaxed);
        Expr(Arc::new(Node { id, op, operands }))
    }

    pub fn input(name: impl Into<String>) -> Expr {
        Self::node(Op::Input(name.into()), Vec::new())
    }

    pub fn parameter(name: impl Into<String>) -> Expr {
        Self::node(Op::Parameter(name.into()), Vec::new())
    }

    /// A named leaf, differentiable or not.
    pub fn leaf(name: impl Into<String>, trainable: bool) -> Expr {
        if trainable {
            Self::parameter(name)
        } else {
            Self::input(name)
        }
    }

    pub fn constant(value: Tensor) -> Expr {
        Self::node(Op::Constant(value), Vec::new())
    }

    pub fn add(&self, other: &Expr) -> Expr {
        Self::node(Op::Add, vec![self.clone(), other.clone()])
    }

    pub fn sub(&self, other: &Expr) -> Expr {
        Self::node(Op::Sub, vec![self.clone(), other.clone()])
    }

    pub fn mul(&self, other: &Expr) -> Expr {
        Self::node(Op::Mul, vec![self.clone(), other.clone()])
    }

    pub fn scale(&self, factor: f64) -> Expr {
        Self::node(Op::Scale(factor), vec![self.clone()])
    }

    pub fn add_scalar(&self, offset: f64) -> Expr {
        Self::node(Op::AddScalar(offset), vec![self.clone()])
    }

    pub fn abs(&self) -> Expr {
        Self::node(Op::Abs, vec![self.clone()])
    }

    pub fn huber(&self, delta: f64) -> Expr {
        Self::node(Op::Huber(delta), vec![self.clone()])
    }

    pub fn sum(&self) -> Expr {
        Self::node(Op::Sum, vec![self.clone()])
    }

    pub fn mean(&self) -> Expr {
        Self::node(Op::Mean, vec![self.clone()])
    }

    pub fn square(&self) -> Expr {
        self.mul(self)
    }

    pub fn cumsum(&self) -> Expr {
        Self::node(Op::Cumsum, vec![self.clone()])
    }

    pub fn softmax(&self) -> Expr {
        Self::node(Op::Softmax, vec![self.clone()])
    }

    pub fn leaky_relu(&self, slope: f64) -> Expr {
        Self::node(Op::LeakyRelu(slope), vec![self.clone()])
    }

    pub fn global_avg_pool(&self) -> Expr {
        Self::node(Op::GlobalAvgPool, vec![self.clone()])
    }

    pub fn fully_connected(&self, weights: &Expr, bias: &Expr) -> Expr {
        Self::node(Op::FullyConnected, vec![self.clone(), weights.clone(), bias.clone()])
    }

    pub fn conv2d(&self, weights: &Expr, bias: &Expr, spec: ConvSpec) -> Expr {
        Self::node(Op::Conv2d(spec), vec![self.clone(), weights.clone(), bias.clone()])
    }

    pub fn pad(&self, margin_h: usize, margin_w: usize, mode: PaddingMode) -> Expr {
        Self::node(Op::Pad { margin_h, margin_w, mode }, vec![self.clone()])
    }

    pub fn op(&self) -> &Op {
        &self.0.op
    }

    pub fn operands(&self) -> &[Expr] {
        &self.0.operands
    }

    /// Process-unique node id.
    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn same_node(&self, other: &Expr) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// `kind#id` or `kind(name)` label used in error messages.
    pub fn label(&self) -> String {
        match &self.0.op {
            Op::Input(n) | Op::Parameter(n) => format!("{}({n})", self.0.op.name()),
            op => format!("{}#{}", op.name(), self.0.id),
        }
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}
