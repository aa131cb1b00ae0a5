//! Pointwise and pooling primitives, with their vector-Jacobian products.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Negative-side slope used throughout the enhancement and quality networks.
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn check_slope(slope: f64) -> Result<()> {
    if (0.0..1.0).contains(&slope) {
        Ok(())
    } else {
        Err(Error::InvalidSlope(slope))
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    check_slope(slope)?;
    Ok(x.map(|v| if v >= 0.0 { v } else { slope * v }))
}

/// The derivative at 0 takes the negative branch.
pub(crate) fn leaky_relu_backward(x: &Tensor, grad: &Tensor, slope: f64) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Per-channel spatial mean of an `[h, w, c]` tensor.
pub fn global_average_pool(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::shape("global_average_pool", format!("expected [h, w, c], got {s:?}")));
    }
    let c = s[2];
    let n = s[0] * s[1];
    let mut sums = vec![0.0; c];
    for px in x.data().chunks_exact(c) {
        for (a, v) in sums.iter_mut().zip(px) {
            *a += v;
        }
    }
    Ok(Tensor::from_parts(vec![c], sums.into_iter().map(|v| v / n as f64).collect()))
}

pub(crate) fn global_average_pool_backward(shape: &[usize], grad: &Tensor) -> Tensor {
    let n = (shape[0] * shape[1]) as f64;
    let per: Vec<f64> = grad.data().iter().map(|g| g / n).collect();
    let mut data = Vec::with_capacity(shape.iter().product());
    for _ in 0..shape[0] * shape[1] {
        data.extend_from_slice(&per);
    }
    Tensor::from_parts(shape.to_vec(), data)
}

/// `x^T W + b` for `x: [c]`, `W: [c, m]`, `b: [m]`.
pub fn fully_connected(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (xs, ws, bs) = (x.shape(), weights.shape(), bias.shape());
    if xs.len() != 1 || ws.len() != 2 || bs.len() != 1 || ws[0] != xs[0] || ws[1] != bs[0] {
        return Err(Error::shape(
            "fully_connected",
            format!("x {xs:?}, W {ws:?}, b {bs:?}"),
        ));
    }
    let m = ws[1];
    let mut out = bias.data().to_vec();
    for (i, &xv) in x.data().iter().enumerate() {
        for (o, w) in out.iter_mut().zip(&weights.data()[i * m..(i + 1) * m]) {
            *o += xv * w;
        }
    }
    Ok(Tensor::from_parts(vec![m], out))
}

/// Returns `(dx, dW, db)`.
pub(crate) fn fully_connected_backward(x: &Tensor, weights: &Tensor, grad: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (c, m) = (weights.shape()[0], weights.shape()[1]);
    let g = grad.data();
    let w = weights.data();
    let dx = (0..c)
        .map(|i| w[i * m..(i + 1) * m].iter().zip(g).map(|(a, b)| a * b).sum())
        .collect();
    let mut dw = Vec::with_capacity(c * m);
    for &xv in x.data() {
        dw.extend(g.iter().map(|gv| xv * gv));
    }
    (
        Tensor::from_parts(vec![c], dx),
        Tensor::from_parts(vec![c, m], dw),
        grad.clone(),
    )
}

/// Max-shifted soft-max over a 1-D tensor.
pub fn softmax(z: &Tensor) -> Result<Tensor> {
    if z.rank() != 1 {
        return Err(Error::shape("softmax", format!("expected a vector, got {:?}", z.shape())));
    }
    let max = z.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.data().iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(Tensor::from_parts(z.shape().to_vec(), exps.into_iter().map(|e| e / total).collect()))
}

pub(crate) fn softmax_backward(y: &Tensor, grad: &Tensor) -> Tensor {
    let dot: f64 = y.data().iter().zip(grad.data()).map(|(a, b)| a * b).sum();
    let data = y.data().iter().zip(grad.data()).map(|(yv, g)| yv * (g - dot)).collect();
    Tensor::from_parts(y.shape().to_vec(), data)
}
