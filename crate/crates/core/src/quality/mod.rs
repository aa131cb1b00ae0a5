//! No-reference quality prediction over ordered rating buckets.

pub mod metrics;
pub mod model;
pub mod rating;

pub use metrics::{eval_metrics, pearson, spearman, EvalReport, QUALITY_CUTOFF};
pub use model::{build_tiny_nima, quality_penalty, NimaConfig, NimaModel};
pub use rating::{
    emd, emd_squared_expr, emd_train_loss, mean_score_expr, nima_score, penalty_expr, RatingDistribution, BUCKETS,
    MAX_SCORE,
};
