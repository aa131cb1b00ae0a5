//! Fidelity-plus-quality objective for the enhancement network:
//! `f(reference, output) + gamma * (N - NIMA(output))`.

use std::str::FromStr;

use crate::autodiff::{Bindings, Evaluation, Expr};
use crate::error::{Error, Result};
use crate::quality::NimaModel;
use crate::tensor::Tensor;

/// Full-reference data term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fidelity {
    /// Mean squared error.
    L2,
    /// Mean absolute error.
    L1,
    /// Mean Huber loss with the given threshold.
    Huber(f64),
}

impl FromStr for Fidelity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Fidelity::L2),
            "l1" => Ok(Fidelity::L1),
            other => match other.strip_prefix("huber:").map(str::parse::<f64>) {
                Some(Ok(delta)) if delta > 0.0 => Ok(Fidelity::Huber(delta)),
                _ => Err(Error::InvalidConfig(format!("unknown fidelity `{other}`"))),
            },
        }
    }
}

impl std::fmt::Display for Fidelity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Fidelity::L2 => f.write_str("l2"),
            Fidelity::L1 => f.write_str("l1"),
            Fidelity::Huber(d) => write!(f, "huber:{d}"),
        }
    }
}

impl Fidelity {
    pub fn expr(&self, reference: &Expr, output: &Expr) -> Expr {
        let diff = output.sub(reference);
        match *self {
            Fidelity::L2 => diff.square().mean(),
            Fidelity::L1 => diff.abs().mean(),
            Fidelity::Huber(delta) => diff.huber(delta).mean(),
        }
    }
}

/// Graph nodes of the combined objective. `penalty` is absent when
/// `gamma == 0`, in which case the predictor is not evaluated at all.
pub struct PerceptualLoss {
    pub fidelity: Expr,
    pub penalty: Option<Expr>,
    pub total: Expr,
    pub gamma: f64,
}

impl PerceptualLoss {
    /// The predictor's weights enter as non-trainable inputs.
    pub fn build(reference: &Expr, output: &Expr, nima: &NimaModel, gamma: f64, fidelity: Fidelity) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("gamma must be a finite nonnegative number, got {gamma}")));
        }
        let f = fidelity.expr(reference, output);
        if gamma == 0.0 {
            return Ok(PerceptualLoss { fidelity: f.clone(), penalty: None, total: f, gamma });
        }
        let q = nima.penalty_graph(output, false);
        let total = f.add(&q.scale(gamma));
        Ok(PerceptualLoss { fidelity: f, penalty: Some(q), total, gamma })
    }

    /// `(fidelity, gamma * q, total)` read from a finished forward pass.
    pub fn terms(&self, eval: &Evaluation<'_>) -> LossTerms {
        let fidelity = eval.value(&self.fidelity).expect("fidelity evaluated").item();
        let gamma_q = match &self.penalty {
            Some(q) => self.gamma * eval.value(q).expect("penalty evaluated").item(),
            None => 0.0,
        };
        LossTerms { fidelity, gamma_q, total: eval.value(&self.total).expect("total evaluated").item() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub fidelity: f64,
    pub gamma_q: f64,
    pub total: f64,
}

/// Value of the L2 objective for an already-enhanced image `output`,
/// together with its gradient with respect to `output`.
pub fn perceptual_loss(reference: &Tensor, output: &Tensor, nima: &NimaModel, gamma: f64) -> Result<(LossTerms, Tensor)> {
    if reference.shape() != output.shape() {
        return Err(Error::shape(
            "perceptual_loss",
            format!("reference {:?} vs output {:?}", reference.shape(), output.shape()),
        ));
    }
    if gamma > 0.0 {
        nima.check_size(output)?;
    }
    let xr = Expr::input("reference");
    let y = Expr::parameter("output");
    let loss = PerceptualLoss::build(&xr, &y, nima, gamma, Fidelity::L2)?;
    let mut b = Bindings::new();
    b.bind_params(&nima.params).bind_ref("reference", reference).bind_ref("output", output);
    let eval = Evaluation::forward(&loss.total, &b)?;
    let terms = loss.terms(&eval);
    let mut grads = eval.backward()?;
    Ok((terms, grads.remove("output").expect("output is a parameter")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fidelity_names_round_trip() {
        for f in [Fidelity::L2, Fidelity::L1, Fidelity::Huber(0.05)] {
            assert_eq!(f.to_string().parse::<Fidelity>().unwrap(), f);
        }
        assert!("huber:-1".parse::<Fidelity>().is_err());
        assert!("l3".parse::<Fidelity>().is_err());
    }
}
