//! The quality predictor: a small strided convolutional backbone followed by
//! global average pooling, a fully-connected layer with one output per
//! bucket and a soft-max.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::rating::{mean_score_expr, penalty_expr, RatingDistribution, BUCKETS};
use crate::autodiff::{value_and_gradient, Bindings, Evaluation, Expr};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::nn::init::{init_kernel, InitScheme};
use crate::nn::{ops, ConvSpec, PaddingMode};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const PREFIX: &str = "nima";

#[derive(Clone, Debug, PartialEq)]
pub struct NimaConfig {
    /// Output channels of each stride-2 3x3 stage.
    pub channels: Vec<usize>,
    pub stride: usize,
    pub leaky_slope: f64,
    pub buckets: usize,
    pub padding: PaddingMode,
}

impl Default for NimaConfig {
    fn default() -> Self {
        NimaConfig {
            channels: vec![8, 16, 32, 32],
            stride: 2,
            leaky_slope: ops::LEAKY_SLOPE,
            buckets: BUCKETS,
            padding: PaddingMode::Symmetric,
        }
    }
}

impl NimaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::InvalidConfig(format!("nima channels {:?}", self.channels)));
        }
        if self.stride == 0 {
            return Err(Error::InvalidConfig("nima stride must be positive".into()));
        }
        if self.buckets < 2 {
            return Err(Error::InvalidConfig(format!("nima needs at least 2 buckets, got {}", self.buckets)));
        }
        ops::check_slope(self.leaky_slope).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Smallest accepted image side: every stage but the last still halves
    /// real content.
    pub fn min_size(&self) -> usize {
        self.stride.pow(self.channels.len() as u32 - 1).max(1)
    }

    pub fn to_kv(&self, kv: &mut KvConfig, prefix: &str) {
        let channels: Vec<String> = self.channels.iter().map(usize::to_string).collect();
        kv.set(format!("{prefix}channels"), channels.join(","));
        kv.set(format!("{prefix}stride"), self.stride);
        kv.set(format!("{prefix}leaky_slope"), self.leaky_slope);
        kv.set(format!("{prefix}buckets"), self.buckets);
        kv.set(format!("{prefix}padding"), self.padding);
    }

    pub fn from_kv(kv: &KvConfig, prefix: &str) -> Result<Self> {
        let d = NimaConfig::default();
        let cfg = NimaConfig {
            channels: kv.get_list(&format!("{prefix}channels"))?.unwrap_or(d.channels),
            stride: kv.get(&format!("{prefix}stride"))?.unwrap_or(d.stride),
            leaky_slope: kv.get(&format!("{prefix}leaky_slope"))?.unwrap_or(d.leaky_slope),
            buckets: kv.get(&format!("{prefix}buckets"))?.unwrap_or(d.buckets),
            padding: kv.get(&format!("{prefix}padding"))?.unwrap_or(d.padding),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NimaModel {
    pub config: NimaConfig,
    pub params: ParamSet,
    /// A frozen model is never updated by a training step.
    pub frozen: bool,
}

/// Graph nodes of one predictor application.
pub struct NimaGraph {
    pub logits: Expr,
    pub probs: Expr,
}

pub fn conv_weight(k: usize) -> String {
    format!("{PREFIX}.conv{k}.weight")
}

pub fn conv_bias(k: usize) -> String {
    format!("{PREFIX}.conv{k}.bias")
}

pub const HEAD_WEIGHT: &str = "nima.head.weight";
pub const HEAD_BIAS: &str = "nima.head.bias";

/// Builds a predictor with seeded fan-in-scaled Gaussian weights.
pub fn build_tiny_nima(config: NimaConfig, seed: u64) -> Result<NimaModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let mut cin = 3;
    for (k, &cout) in config.channels.iter().enumerate() {
        params.insert(conv_weight(k), init_kernel(InitScheme::FanInGaussian, [3, 3, cin, cout], &mut rng));
        params.insert(conv_bias(k), Tensor::zeros(&[cout]));
        cin = cout;
    }
    let normal = Normal::new(0.0, (1.0 / cin as f64).sqrt()).expect("finite std");
    let head: Vec<f64> = (0..cin * config.buckets).map(|_| normal.sample(&mut rng)).collect();
    params.insert(HEAD_WEIGHT, Tensor::new(&[cin, config.buckets], head)?);
    params.insert(HEAD_BIAS, Tensor::zeros(&[config.buckets]));
    Ok(NimaModel { config, params, frozen: false })
}

impl NimaModel {
    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn is_head(name: &str) -> bool {
        name.starts_with("nima.head.")
    }

    pub fn check_size(&self, image: &Tensor) -> Result<()> {
        let s = image.shape();
        if s.len() != 3 || s[2] != 3 {
            return Err(Error::shape("nima input", format!("expected [h, w, 3], got {s:?}")));
        }
        let min = self.config.min_size();
        if s[0] < min || s[1] < min {
            return Err(Error::ImageTooSmall { height: s[0], width: s[1], dilation: 1, min });
        }
        Ok(())
    }

    /// Applies the predictor to `image`; weights become parameter leaves
    /// when `trainable`, inputs otherwise.
    pub fn graph(&self, image: &Expr, trainable: bool) -> NimaGraph {
        let mut x = image.clone();
        for k in 0..self.config.channels.len() {
            let w = Expr::leaf(conv_weight(k), trainable);
            let b = Expr::leaf(conv_bias(k), trainable);
            x = x
                .conv2d(&w, &b, ConvSpec::new(1, self.config.stride, self.config.padding))
                .leaky_relu(self.config.leaky_slope);
        }
        let logits = x
            .global_avg_pool()
            .fully_connected(&Expr::leaf(HEAD_WEIGHT, trainable), &Expr::leaf(HEAD_BIAS, trainable));
        let probs = logits.softmax();
        NimaGraph { logits, probs }
    }

    /// Quality penalty `N - mean score` of the predictor applied to `image`.
    pub fn penalty_graph(&self, image: &Expr, trainable: bool) -> Expr {
        penalty_expr(&self.graph(image, trainable).probs, self.config.buckets)
    }

    pub fn predict(&self, image: &Tensor) -> Result<RatingDistribution> {
        self.check_size(image)?;
        let input = Expr::input("image");
        let g = self.graph(&input, false);
        let mut b = Bindings::new();
        b.bind_params(&self.params).bind_ref("image", image);
        let eval = Evaluation::forward(&g.probs, &b)?;
        RatingDistribution::new(eval.root().data().to_vec())
    }

    /// Predicted mean score in `[1, N]`.
    pub fn score(&self, image: &Tensor) -> Result<f64> {
        Ok(self.predict(image)?.mean_score())
    }

    /// Mean-score expression, for callers composing larger graphs.
    pub fn score_graph(&self, image: &Expr, trainable: bool) -> Expr {
        mean_score_expr(&self.graph(image, trainable).probs, self.config.buckets)
    }
}

/// `10 - NIMA(x)` and its gradient with respect to every pixel of `x`.
pub fn quality_penalty(image: &Tensor, model: &NimaModel) -> Result<(f64, Tensor)> {
    model.check_size(image)?;
    let x = Expr::parameter("image");
    let q = model.penalty_graph(&x, false);
    let mut b = Bindings::new();
    b.bind_params(&model.params).bind_ref("image", image);
    let (value, mut grads) = value_and_gradient(&q, &b)?;
    Ok((value, grads.remove("image").expect("image is a parameter")))
}
