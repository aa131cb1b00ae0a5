use crate::error::{Error, Result};

pub(crate) fn check_schedule(decay_factor: f64, period: usize) -> Result<()> {
    if period == 0 {
        return Err(Error::InvalidConfig("decay period must be at least one epoch".into()));
    }
    if !(decay_factor > 0.0 && decay_factor <= 1.0) {
        return Err(Error::InvalidConfig(format!("decay factor {decay_factor} must be in (0, 1]")));
    }
    Ok(())
}

/// Step-wise exponential decay: `base_lr * decay_factor^floor(epoch / period)`.
pub fn lr_schedule(epoch: usize, base_lr: f64, decay_factor: f64, period: usize) -> Result<f64> {
    check_schedule(decay_factor, period)?;
    Ok(base_lr * decay_factor.powi((epoch / period) as i32))
}
