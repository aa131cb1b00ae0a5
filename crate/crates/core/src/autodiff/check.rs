use super::eval::{gradient, evaluate, Bindings};
use super::expr::Expr;
use crate::error::{Error, Result};

/// Largest relative disagreement between the analytic gradient and central
/// differences with the given step, over every entry of every parameter.
///
/// The relative error of one entry is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check(root: &Expr, bindings: &Bindings<'_>, step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("finite-difference step must be positive, got {step}")));
    }
    let analytic = gradient(root, bindings)?;
    let mut probe = bindings.clone();
    let mut worst = 0.0f64;
    for (name, grad) in &analytic {
        for k in 0..grad.numel() {
            let original = probe.get(name).expect("parameter is bound").data()[k];
            probe.get_mut(name).unwrap().data_mut()[k] = original + step;
            let plus = evaluate(root, &probe)?.item();
            probe.get_mut(name).unwrap().data_mut()[k] = original - step;
            let minus = evaluate(root, &probe)?.item();
            probe.get_mut(name).unwrap().data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
