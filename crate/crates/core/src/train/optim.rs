//! First-order optimizers over named parameter sets.

use std::collections::BTreeMap;

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::params::ParamSet;

use super::config::{OptimizerKind, TrainConfig};

/// Velocity buffers of heavy-ball momentum.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MomentumState {
    pub velocity: BTreeMap<String, Vec<f64>>,
    pub steps: u64,
}

/// First and second moment estimates of Adam.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub steps: u64,
}

fn check_shapes(params: &ParamSet, grads: &Gradients) -> Result<()> {
    for (name, g) in grads {
        match params.get(name) {
            None => return Err(Error::MissingTensor(name.clone())),
            Some(p) if p.shape() != g.shape() => {
                return Err(Error::shape(
                    name.clone(),
                    format!("gradient {:?} for parameter {:?}", g.shape(), p.shape()),
                ))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// `v <- mu * v + g; w <- w - lr * v` for every parameter with a gradient.
pub fn momentum_step(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut MomentumState,
    lr: impl Fn(&str) -> f64,
    mu: f64,
) -> Result<()> {
    check_shapes(params, grads)?;
    for (name, g) in grads {
        let w = params.get_mut(name).expect("checked");
        let v = state.velocity.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]);
        let rate = lr(name);
        for ((wi, vi), gi) in w.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
            *vi = mu * *vi + gi;
            *wi -= rate * *vi;
        }
    }
    state.steps += 1;
    Ok(())
}

/// Bias-corrected Adam update.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut AdamState,
    lr: impl Fn(&str) -> f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    check_shapes(params, grads)?;
    state.steps += 1;
    let t = state.steps as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (name, g) in grads {
        let w = params.get_mut(name).expect("checked");
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]);
        let rate = lr(name);
        for (((wi, mi), vi), &gi) in w.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *wi -= rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Optimizer selected by a [`TrainConfig`].
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Momentum { state: MomentumState, mu: f64 },
    Adam { state: AdamState, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        match cfg.optimizer {
            OptimizerKind::Momentum => Optimizer::Momentum { state: MomentumState::default(), mu: cfg.momentum },
            OptimizerKind::Adam => Optimizer::Adam {
                state: AdamState::default(),
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                eps: cfg.eps,
            },
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, lr: impl Fn(&str) -> f64) -> Result<()> {
        match self {
            Optimizer::Momentum { state, mu } => momentum_step(params, grads, state, lr, *mu),
            Optimizer::Adam { state, beta1, beta2, eps } => adam_step(params, grads, state, lr, *beta1, *beta2, *eps),
        }
    }

    pub fn steps(&self) -> u64 {
        match self {
            Optimizer::Momentum { state, .. } => state.steps,
            Optimizer::Adam { state, .. } => state.steps,
        }
    }
}
