//! Predictor evaluation: two-class accuracy, linear and rank correlation of
//! mean scores, and mean order-1 EMD.

use super::rating::{emd, RatingDistribution};
use crate::error::{Error, Result};

/// Mean score separating the "low" and "high" quality classes.
pub const QUALITY_CUTOFF: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub two_class_accuracy: f64,
    /// `None` when either score list has zero variance.
    pub lcc: Option<f64>,
    pub srcc: Option<f64>,
    pub mean_emd: f64,
}

pub fn eval_metrics(predicted: &[RatingDistribution], truth: &[RatingDistribution]) -> Result<EvalReport> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch(predicted.len(), truth.len()));
    }
    if predicted.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 items to evaluate, got {}",
            predicted.len()
        )));
    }
    let n = predicted.len() as f64;
    let pm: Vec<f64> = predicted.iter().map(RatingDistribution::mean_score).collect();
    let tm: Vec<f64> = truth.iter().map(RatingDistribution::mean_score).collect();
    let agree = pm
        .iter()
        .zip(&tm)
        .filter(|(p, t)| (**p > QUALITY_CUTOFF) == (**t > QUALITY_CUTOFF))
        .count();
    let mut emd_total = 0.0;
    for (p, t) in predicted.iter().zip(truth) {
        emd_total += emd(t, p, 1.0)?;
    }
    Ok(EvalReport {
        two_class_accuracy: agree as f64 / n,
        lcc: pearson(&pm, &tm),
        srcc: spearman(&pm, &tm),
        mean_emd: emd_total / n,
    })
}

/// Pearson correlation; `None` for mismatched lengths, fewer than two
/// points, or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(xs) || constant(ys) {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the average of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation with average-rank ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    pearson(&average_ranks(xs), &average_ranks(ys))
}
