use std::fmt;
use std::str::FromStr;

use crate::config::KvConfig;
use crate::enhance::Fidelity;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Momentum,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "momentum" => Ok(OptimizerKind::Momentum),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidConfig(format!("unknown optimizer `{other}`"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Momentum => "momentum",
            OptimizerKind::Adam => "adam",
        })
    }
}

/// Hyper-parameters of either training loop.
///
/// The quality predictor uses two learning-rate groups (`lr_backbone` for
/// the convolution stages, `lr_head` for the fully-connected head); the
/// enhancer uses `lr` for every weight.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub step_budget: usize,
    pub decay_factor: f64,
    pub decay_period_epochs: usize,
    pub seed: u64,
    pub fidelity: Fidelity,
}

impl TrainConfig {
    /// Momentum SGD, batches of 64, rates decayed by 0.95 every 10 epochs.
    pub fn nima() -> Self {
        TrainConfig {
            gamma: 0.0,
            optimizer: OptimizerKind::Momentum,
            lr: 1e-3,
            lr_backbone: 1e-3,
            lr_head: 1e-2,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            step_budget: 2000,
            decay_factor: 0.95,
            decay_period_epochs: 10,
            seed: 0,
            fidelity: Fidelity::L2,
        }
    }

    /// Adam at 1e-3 on both groups, batches of 32, 6000 steps. Reaches a
    /// usable predictor on the synthetic rated set in a few minutes.
    pub fn nima_desk() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            lr_backbone: 1e-3,
            lr_head: 1e-3,
            batch_size: 32,
            step_budget: 6000,
            ..Self::nima()
        }
    }

    /// Adam at 1e-4, batch size 1, gamma 1e-4, 2e4 steps.
    pub fn can() -> Self {
        TrainConfig {
            gamma: 1e-4,
            optimizer: OptimizerKind::Adam,
            lr: 1e-4,
            lr_backbone: 1e-4,
            lr_head: 1e-4,
            batch_size: 1,
            step_budget: 20_000,
            decay_factor: 1.0,
            ..Self::nima()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidConfig(what));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma {} must be finite and >= 0", self.gamma));
        }
        for (name, v) in [("lr", self.lr), ("lr_backbone", self.lr_backbone), ("lr_head", self.lr_head)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be finite and >= 0"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must be in [0, 1)", self.momentum));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad(format!("adam betas ({}, {}) must be in (0, 1)", self.beta1, self.beta2));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps {} must be > 0", self.eps));
        }
        if self.batch_size == 0 || self.step_budget == 0 {
            return bad("batch_size and step_budget must be positive".into());
        }
        super::schedule::check_schedule(self.decay_factor, self.decay_period_epochs)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("gamma", self.gamma);
        kv.set("optimizer", self.optimizer);
        kv.set("lr", self.lr);
        kv.set("lr_backbone", self.lr_backbone);
        kv.set("lr_head", self.lr_head);
        kv.set("momentum", self.momentum);
        kv.set("beta1", self.beta1);
        kv.set("beta2", self.beta2);
        kv.set("eps", self.eps);
        kv.set("batch_size", self.batch_size);
        kv.set("step_budget", self.step_budget);
        kv.set("decay_factor", self.decay_factor);
        kv.set("decay_period_epochs", self.decay_period_epochs);
        kv.set("seed", self.seed);
        kv.set("fidelity", self.fidelity);
        kv
    }

    /// Overrides the fields of `base` present in `kv`.
    pub fn from_kv(kv: &KvConfig, base: TrainConfig) -> Result<Self> {
        let cfg = TrainConfig {
            gamma: kv.get("gamma")?.unwrap_or(base.gamma),
            optimizer: kv.get("optimizer")?.unwrap_or(base.optimizer),
            lr: kv.get("lr")?.unwrap_or(base.lr),
            lr_backbone: kv.get("lr_backbone")?.unwrap_or(base.lr_backbone),
            lr_head: kv.get("lr_head")?.unwrap_or(base.lr_head),
            momentum: kv.get("momentum")?.unwrap_or(base.momentum),
            beta1: kv.get("beta1")?.unwrap_or(base.beta1),
            beta2: kv.get("beta2")?.unwrap_or(base.beta2),
            eps: kv.get("eps")?.unwrap_or(base.eps),
            batch_size: kv.get("batch_size")?.unwrap_or(base.batch_size),
            step_budget: kv.get("step_budget")?.unwrap_or(base.step_budget),
            decay_factor: kv.get("decay_factor")?.unwrap_or(base.decay_factor),
            decay_period_epochs: kv.get("decay_period_epochs")?.unwrap_or(base.decay_period_epochs),
            seed: kv.get("seed")?.unwrap_or(base.seed),
            fidelity: kv.get("fidelity")?.unwrap_or(base.fidelity),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_and_round_trip() {
        for cfg in [TrainConfig::nima(), TrainConfig::nima_desk(), TrainConfig::can()] {
            cfg.validate().unwrap();
            assert_eq!(TrainConfig::from_kv(&cfg.to_kv(), TrainConfig::nima()).unwrap(), cfg);
        }
    }

    #[test]
    fn rejects_invalid_values() {
        let base = TrainConfig::can();
        for (k, v) in [("gamma", "-1"), ("momentum", "1.0"), ("beta1", "0"), ("eps", "0"), ("batch_size", "0"), ("decay_factor", "1.5")] {
            let kv = KvConfig::parse(&format!("{k}={v}")).unwrap();
            assert!(TrainConfig::from_kv(&kv, base.clone()).is_err(), "{k}={v} accepted");
        }
    }
}
