use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use super::expr::{Expr, Op};
use crate::error::{Error, Result};
use crate::nn::conv::{self, ConvGeometry, PaddingMode};
use crate::nn::ops;
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Values for the named leaves of a graph. Tensors can be borrowed so model
/// parameters are not copied per evaluation.
#[derive(Clone, Debug, Default)]
pub struct Bindings<'a> {
    values: HashMap<String, Cow<'a, Tensor>>,
}

impl<'a> Bindings<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, name: impl Into<String>, value: Tensor) -> &mut Self {
        self.values.insert(name.into(), Cow::Owned(value));
        self
    }

    pub fn bind_ref(&mut self, name: impl Into<String>, value: &'a Tensor) -> &mut Self {
        self.values.insert(name.into(), Cow::Borrowed(value));
        self
    }

    pub fn bind_params(&mut self, params: &'a ParamSet) -> &mut Self {
        for (name, t) in params.iter() {
            self.bind_ref(name.clone(), t);
        }
        self
    }

    pub fn with(mut self, name: impl Into<String>, value: Tensor) -> Self {
        self.bind(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.values.get(name).map(|c| c.as_ref())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.values.get_mut(name).map(Cow::to_mut)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.values.keys()
    }
}

/// Gradients of a scalar root with respect to every parameter leaf.
pub type Gradients = BTreeMap<String, Tensor>;

/// A completed forward pass: every node's value, in topological order.
pub struct Evaluation<'a> {
    order: Vec<Expr>,
    index: HashMap<u64, usize>,
    values: Vec<Cow<'a, Tensor>>,
    /// Padded inputs kept by convolution nodes for the backward pass.
    padded: Vec<Option<Tensor>>,
    needs_grad: Vec<bool>,
}

fn topological_order(root: &Expr) -> Vec<Expr> {
    let mut order = Vec::new();
    let mut seen = std::collections::HashSet::new();
    // iterative post-order DFS
    let mut stack: Vec<(Expr, usize)> = vec![(root.clone(), 0)];
    seen.insert(root.id());
    while let Some((node, next)) = stack.pop() {
        if next < node.operands().len() {
            let child = node.operands()[next].clone();
            stack.push((node, next + 1));
            if seen.insert(child.id()) {
                stack.push((child, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

fn same_shape(node: &Expr, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            node.label(),
            format!("operand shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn huber(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        0.5 * x * x
    } else {
        delta * (x.abs() - 0.5 * delta)
    }
}

fn relabel(node: &Expr, err: Error) -> Error {
    match err {
        Error::ShapeMismatch { detail, .. } => Error::ShapeMismatch { node: node.label(), detail },
        other => other,
    }
}

impl<'a> Evaluation<'a> {
    /// Runs the forward pass of `root` under `bindings`.
    pub fn forward(root: &Expr, bindings: &Bindings<'a>) -> Result<Self> {
        let order = topological_order(root);
        let mut index = HashMap::with_capacity(order.len());
        let mut values: Vec<Cow<'a, Tensor>> = Vec::with_capacity(order.len());
        let mut padded = Vec::with_capacity(order.len());
        let mut needs_grad = Vec::with_capacity(order.len());

        for (pos, node) in order.iter().enumerate() {
            let operand_ids: Vec<usize> = node.operands().iter().map(|o| index[&o.id()]).collect();
            let arg = |k: usize| -> &Tensor { values[operand_ids[k]].as_ref() };
            let mut pad_buf = None;
            let value: Cow<'a, Tensor> = match node.op() {
                Op::Input(name) | Op::Parameter(name) => match bindings.values.get(name) {
                    Some(Cow::Borrowed(t)) => Cow::Borrowed(*t),
                    Some(Cow::Owned(t)) => Cow::Owned(t.clone()),
                    None => return Err(Error::UnboundInput(name.clone())),
                },
                Op::Constant(t) => Cow::Owned(t.clone()),
                Op::Add => {
                    same_shape(node, arg(0), arg(1))?;
                    Cow::Owned(zip_map(arg(0), arg(1), |x, y| x + y))
                }
                Op::Sub => {
                    same_shape(node, arg(0), arg(1))?;
                    Cow::Owned(zip_map(arg(0), arg(1), |x, y| x - y))
                }
                Op::Mul => {
                    same_shape(node, arg(0), arg(1))?;
                    Cow::Owned(zip_map(arg(0), arg(1), |x, y| x * y))
                }
                Op::Scale(k) => Cow::Owned(arg(0).map(|v| k * v)),
                Op::AddScalar(k) => Cow::Owned(arg(0).map(|v| v + k)),
                Op::Abs => Cow::Owned(arg(0).map(f64::abs)),
                Op::Huber(delta) => Cow::Owned(arg(0).map(|v| huber(v, *delta))),
                Op::Sum => Cow::Owned(Tensor::scalar(arg(0).data().iter().sum())),
                Op::Mean => {
                    let x = arg(0);
                    Cow::Owned(Tensor::scalar(x.data().iter().sum::<f64>() / x.numel() as f64))
                }
                Op::Cumsum => {
                    let x = arg(0);
                    if x.rank() != 1 {
                        return Err(Error::shape(node.label(), format!("expected a vector, got {:?}", x.shape())));
                    }
                    let mut acc = 0.0;
                    let data = x
                        .data()
                        .iter()
                        .map(|v| {
                            acc += v;
                            acc
                        })
                        .collect();
                    Cow::Owned(Tensor::from_parts(x.shape().to_vec(), data))
                }
                Op::Softmax => Cow::Owned(ops::softmax(arg(0)).map_err(|e| relabel(node, e))?),
                Op::LeakyRelu(slope) => Cow::Owned(ops::leaky_relu(arg(0), *slope)?),
                Op::GlobalAvgPool => Cow::Owned(ops::global_average_pool(arg(0)).map_err(|e| relabel(node, e))?),
                Op::FullyConnected => {
                    Cow::Owned(ops::fully_connected(arg(0), arg(1), arg(2)).map_err(|e| relabel(node, e))?)
                }
                Op::Conv2d(spec) => {
                    let (x, w, b) = (arg(0), arg(1), arg(2));
                    let geom = ConvGeometry::new(x.shape(), w.shape(), *spec).map_err(|e| relabel(node, e))?;
                    if b.shape() != [geom.out_channels] {
                        return Err(Error::shape(
                            node.label(),
                            format!("bias {:?} for {} output channels", b.shape(), geom.out_channels),
                        ));
                    }
                    let p = conv::pad(x, geom.margin_h, geom.margin_w, spec.padding)?;
                    let y = conv::forward(&geom, &p, w, b);
                    pad_buf = Some(p);
                    Cow::Owned(y)
                }
                Op::Pad { margin_h, margin_w, mode } => {
                    Cow::Owned(conv::pad(arg(0), *margin_h, *margin_w, *mode).map_err(|e| relabel(node, e))?)
                }
            };
            let grad = match node.op() {
                Op::Parameter(_) => true,
                Op::Input(_) | Op::Constant(_) => false,
                _ => operand_ids.iter().any(|&k| needs_grad[k]),
            };
            index.insert(node.id(), pos);
            values.push(value);
            padded.push(pad_buf);
            needs_grad.push(grad);
        }
        Ok(Evaluation { order, index, values, padded, needs_grad })
    }

    pub fn root(&self) -> &Tensor {
        self.values.last().expect("graph has a root").as_ref()
    }

    /// Cached value of any node reachable from the root.
    pub fn value(&self, expr: &Expr) -> Option<&Tensor> {
        self.index.get(&expr.id()).map(|&k| self.values[k].as_ref())
    }

    /// Reverse pass from the (scalar) root.
    pub fn backward(&self) -> Result<Gradients> {
        let root = self.root();
        if !root.is_scalar() {
            return Err(Error::NonScalarRoot(root.shape().to_vec()));
        }
        let n = self.order.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[n - 1] = Some(Tensor::full(root.shape(), 1.0));
        let mut out = Gradients::new();

        for pos in (0..n).rev() {
            let node = &self.order[pos];
            if let Op::Parameter(name) = node.op() {
                let g = grads[pos].take().unwrap_or_else(|| Tensor::zeros(self.values[pos].shape()));
                match out.get_mut(name) {
                    // the same name used by two leaves shares one gradient
                    Some(existing) => existing.accumulate(&g),
                    None => {
                        out.insert(name.clone(), g);
                    }
                }
                continue;
            }
            if !self.needs_grad[pos] {
                continue;
            }
            let Some(g) = grads[pos].take() else { continue };
            let ids: Vec<usize> = node.operands().iter().map(|o| self.index[&o.id()]).collect();
            let want = |k: usize| self.needs_grad[ids[k]];
            let val = |k: usize| self.values[ids[k]].as_ref();
            let mut contributions: Vec<(usize, Tensor)> = Vec::with_capacity(ids.len());

            match node.op() {
                Op::Input(_) | Op::Parameter(_) | Op::Constant(_) => {}
                Op::Add => {
                    for k in 0..2 {
                        if want(k) {
                            contributions.push((k, g.clone()));
                        }
                    }
                }
                Op::Sub => {
                    if want(0) {
                        contributions.push((0, g.clone()));
                    }
                    if want(1) {
                        contributions.push((1, g.map(|v| -v)));
                    }
                }
                Op::Mul => {
                    if want(0) {
                        contributions.push((0, zip_map(&g, val(1), |a, b| a * b)));
                    }
                    if want(1) {
                        contributions.push((1, zip_map(&g, val(0), |a, b| a * b)));
                    }
                }
                Op::Scale(k) => contributions.push((0, g.map(|v| k * v))),
                Op::AddScalar(_) => contributions.push((0, g)),
                Op::Abs => contributions.push((0, zip_map(&g, val(0), |gv, x| if x >= 0.0 { gv } else { -gv }))),
                Op::Huber(delta) => {
                    contributions.push((0, zip_map(&g, val(0), |gv, x| gv * x.clamp(-*delta, *delta))))
                }
                Op::Sum => contributions.push((0, Tensor::full(val(0).shape(), g.item()))),
                Op::Mean => {
                    let x = val(0);
                    contributions.push((0, Tensor::full(x.shape(), g.item() / x.numel() as f64)));
                }
                Op::Cumsum => {
                    let mut acc = 0.0;
                    let mut data: Vec<f64> = g
                        .data()
                        .iter()
                        .rev()
                        .map(|v| {
                            acc += v;
                            acc
                        })
                        .collect();
                    data.reverse();
                    contributions.push((0, Tensor::from_parts(g.shape().to_vec(), data)));
                }
                Op::Softmax => contributions.push((0, ops::softmax_backward(self.values[pos].as_ref(), &g))),
                Op::LeakyRelu(slope) => contributions.push((0, ops::leaky_relu_backward(val(0), &g, *slope))),
                Op::GlobalAvgPool => contributions.push((0, ops::global_average_pool_backward(val(0).shape(), &g))),
                Op::FullyConnected => {
                    let (dx, dw, db) = ops::fully_connected_backward(val(0), val(1), &g);
                    for (k, t) in [dx, dw, db].into_iter().enumerate() {
                        if want(k) {
                            contributions.push((k, t));
                        }
                    }
                }
                Op::Conv2d(spec) => {
                    let geom = ConvGeometry::new(val(0).shape(), val(1).shape(), *spec)?;
                    let padded = self.padded[pos].as_ref().expect("conv keeps its padded input");
                    if want(0) {
                        let gp = conv::backward_input(&geom, val(1), &g);
                        let gx = conv::pad_adjoint(&gp, geom.height, geom.width, geom.margin_h, geom.margin_w, spec.padding);
                        contributions.push((0, gx));
                    }
                    if want(1) || want(2) {
                        let (gw, gb) = conv::backward_params(&geom, padded, &g);
                        if want(1) {
                            contributions.push((1, gw));
                        }
                        if want(2) {
                            contributions.push((2, gb));
                        }
                    }
                }
                Op::Pad { margin_h, margin_w, mode } => {
                    let s = val(0).shape();
                    let mode: PaddingMode = *mode;
                    contributions.push((0, conv::pad_adjoint(&g, s[0], s[1], *margin_h, *margin_w, mode)));
                }
            }

            for (k, t) in contributions {
                let target = ids[k];
                match &mut grads[target] {
                    Some(existing) => existing.accumulate(&t),
                    slot @ None => *slot = Some(t),
                }
            }
        }
        Ok(out)
    }
}

/// Forward value of `root`.
pub fn evaluate(root: &Expr, bindings: &Bindings<'_>) -> Result<Tensor> {
    Ok(Evaluation::forward(root, bindings)?.root().clone())
}

/// Gradient of the scalar `root` with respect to every parameter leaf.
/// Parameters that do not influence the root get zero tensors.
pub fn gradient(root: &Expr, bindings: &Bindings<'_>) -> Result<Gradients> {
    Evaluation::forward(root, bindings)?.backward()
}

/// Root value together with the parameter gradients, sharing one forward pass.
pub fn value_and_gradient(root: &Expr, bindings: &Bindings<'_>) -> Result<(f64, Gradients)> {
    let eval = Evaluation::forward(root, bindings)?;
    let grads = eval.backward()?;
    Ok((eval.root().item(), grads))
}
