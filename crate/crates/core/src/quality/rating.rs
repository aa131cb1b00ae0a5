//! Rating distributions over ordered score buckets and the EMD between them.

use crate::autodiff::Expr;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of score buckets; bucket `i` (0-based) carries score `i + 1`.
pub const BUCKETS: usize = 10;

/// Highest attainable mean score.
pub const MAX_SCORE: f64 = BUCKETS as f64;

const MASS_TOLERANCE: f64 = 1e-9;

/// Probability mass over buckets with scores `1..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingDistribution {
    probs: Vec<f64>,
}

impl RatingDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("no buckets".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("probability {p} is negative or not finite")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("total mass {total} != 1")));
        }
        Ok(RatingDistribution { probs })
    }

    /// Normalizes nonnegative weights to unit mass.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}")));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Self {
        RatingDistribution { probs: vec![1.0 / n as f64; n] }
    }

    /// All mass on `bucket` (1-based score).
    pub fn one_hot(n: usize, bucket: usize) -> Self {
        assert!((1..=n).contains(&bucket), "bucket {bucket} outside 1..={n}");
        let mut probs = vec![0.0; n];
        probs[bucket - 1] = 1.0;
        RatingDistribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect()
    }

    /// Mean score `sum_i i * p_i`.
    pub fn mean_score(&self) -> f64 {
        self.probs.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::vector(&self.probs)
    }
}

/// Mean score of a predicted distribution.
pub fn nima_score(p: &RatingDistribution) -> f64 {
    p.mean_score()
}

/// Normalized earth mover's distance of order `order` between two
/// distributions over the same ordered buckets:
/// `((1/N) sum_k |CDF_p(k) - CDF_q(k)|^order)^(1/order)`.
pub fn emd(p: &RatingDistribution, q: &RatingDistribution, order: f64) -> Result<f64> {
    Ok(cdf_power_mean(p, q, order)?.powf(1.0 / order))
}

/// Squared order-2 EMD, the training objective.
pub fn emd_train_loss(p: &RatingDistribution, q: &RatingDistribution) -> Result<f64> {
    cdf_power_mean(p, q, 2.0)
}

fn cdf_power_mean(p: &RatingDistribution, q: &RatingDistribution, order: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    if !(order > 0.0) {
        return Err(Error::InvalidParameter(format!("EMD order must be positive, got {order}")));
    }
    let n = p.len() as f64;
    let total: f64 = p
        .cdf()
        .iter()
        .zip(q.cdf())
        .map(|(a, b)| (a - b).abs().powf(order))
        .sum();
    Ok(total / n)
}

/// Squared order-2 EMD as a differentiable expression of two probability
/// vectors.
pub fn emd_squared_expr(target: &Expr, predicted: &Expr) -> Expr {
    target.cumsum().sub(&predicted.cumsum()).square().mean()
}

/// `sum_i s_i p_i` as an expression over a probability vector of length `n`.
pub fn mean_score_expr(probs: &Expr, n: usize) -> Expr {
    let scores = Tensor::vector(&(1..=n).map(|s| s as f64).collect::<Vec<_>>());
    Expr::constant(scores).mul(probs).sum()
}

/// `N - mean score`: zero for a perfect prediction.
pub fn penalty_expr(probs: &Expr, n: usize) -> Expr {
    mean_score_expr(probs, n).scale(-1.0).add_scalar(n as f64)
}
