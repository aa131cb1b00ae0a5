//! Context-aggregation network: a stack of 3x3 convolutions whose dilation
//! grows exponentially, closed by an undilated 3x3 stage and a linear 1x1
//! projection back to RGB.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Bindings, Evaluation, Expr};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::nn::init::{init_kernel, InitScheme};
use crate::nn::{ops, ConvSpec, PaddingMode};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const PREFIX: &str = "can";
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct CanConfig {
    pub depth: usize,
    pub width: usize,
    /// One entry per layer; the last entry belongs to the 1x1 layer and must
    /// be 1.
    pub dilations: Vec<usize>,
    pub leaky_slope: f64,
    pub padding: PaddingMode,
    /// Standard deviation of the noise added to the identity initialization.
    pub init_noise_std: f64,
}

impl Default for CanConfig {
    /// Ten layers of 32 feature maps.
    fn default() -> Self {
        Self::with_depth(10, 32)
    }
}

impl CanConfig {
    pub fn with_depth(depth: usize, width: usize) -> Self {
        CanConfig {
            depth,
            width,
            dilations: default_schedule(depth),
            leaky_slope: ops::LEAKY_SLOPE,
            padding: PaddingMode::Symmetric,
            init_noise_std: 1e-3,
        }
    }

    /// Seven layers: the receptive field (65) covers images up to 64 pixels.
    pub fn desk() -> Self {
        Self::with_depth(7, 32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 {
            return Err(Error::InvalidConfig(format!("depth {} and width {} must be positive", self.depth, self.width)));
        }
        if self.dilations.len() != self.depth {
            return Err(Error::InvalidConfig(format!(
                "dilation schedule has {} entries for depth {}",
                self.dilations.len(),
                self.depth
            )));
        }
        if self.dilations.contains(&0) {
            return Err(Error::InvalidConfig("dilations must be positive".into()));
        }
        if self.dilations[self.depth - 1] != 1 {
            return Err(Error::InvalidConfig("the last layer is not dilated".into()));
        }
        if !(self.init_noise_std >= 0.0) {
            return Err(Error::InvalidConfig(format!("init noise std {}", self.init_noise_std)));
        }
        ops::check_slope(self.leaky_slope).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn kernel_size(&self, layer: usize) -> usize {
        if layer + 1 == self.depth {
            1
        } else {
            3
        }
    }

    /// `[kh, kw, in, out]` of every layer.
    pub fn kernel_shapes(&self) -> Vec<[usize; 4]> {
        (0..self.depth)
            .map(|k| {
                let cin = if k == 0 { IMAGE_CHANNELS } else { self.width };
                let cout = if k + 1 == self.depth { IMAGE_CHANNELS } else { self.width };
                let ks = self.kernel_size(k);
                [ks, ks, cin, cout]
            })
            .collect()
    }

    /// Largest reflection margin; images must be at least this large on both
    /// sides under symmetric padding.
    pub fn min_size(&self) -> (usize, usize) {
        (0..self.depth)
            .filter(|&k| self.kernel_size(k) > 1)
            .map(|k| (self.dilations[k] * (self.kernel_size(k) - 1) / 2, self.dilations[k]))
            .max()
            .unwrap_or((1, 1))
    }

    pub fn to_kv(&self, kv: &mut KvConfig, prefix: &str) {
        let d: Vec<String> = self.dilations.iter().map(usize::to_string).collect();
        kv.set(format!("{prefix}depth"), self.depth);
        kv.set(format!("{prefix}width"), self.width);
        kv.set(format!("{prefix}dilations"), d.join(","));
        kv.set(format!("{prefix}leaky_slope"), self.leaky_slope);
        kv.set(format!("{prefix}padding"), self.padding);
        kv.set(format!("{prefix}init_noise_std"), self.init_noise_std);
    }

    /// Missing keys fall back to the seven-layer desk configuration; a depth
    /// without an explicit schedule gets the default schedule.
    pub fn from_kv(kv: &KvConfig, prefix: &str) -> Result<Self> {
        let d = CanConfig::desk();
        let depth = kv.get(&format!("{prefix}depth"))?.unwrap_or(d.depth);
        let width = kv.get(&format!("{prefix}width"))?.unwrap_or(d.width);
        let cfg = CanConfig {
            depth,
            width,
            dilations: kv.get_list(&format!("{prefix}dilations"))?.unwrap_or_else(|| default_schedule(depth)),
            leaky_slope: kv.get(&format!("{prefix}leaky_slope"))?.unwrap_or(d.leaky_slope),
            padding: kv.get(&format!("{prefix}padding"))?.unwrap_or(d.padding),
            init_noise_std: kv.get(&format!("{prefix}init_noise_std"))?.unwrap_or(d.init_noise_std),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Dilations `1, 2, 4, ..., 2^(d-3)`, then an undilated 3x3 layer, then the
/// 1x1 output layer.
pub fn default_schedule(depth: usize) -> Vec<usize> {
    match depth {
        0 => Vec::new(),
        1 => vec![1],
        d => (0..d - 2).map(|k| 1usize << k).chain([1, 1]).collect(),
    }
}

/// Dilations `1, 2, ..., 2^(d-2)` on every 3x3 layer, then the 1x1 layer.
pub fn literal_schedule(depth: usize) -> Vec<usize> {
    match depth {
        0 => Vec::new(),
        d => (0..d - 1).map(|k| 1usize << k).chain([1]).collect(),
    }
}

/// Width of the input window that influences one output pixel.
pub fn receptive_field(config: &CanConfig) -> usize {
    1 + (0..config.depth)
        .map(|k| config.dilations[k] * (config.kernel_size(k) - 1))
        .sum::<usize>()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanModel {
    pub config: CanConfig,
    pub params: ParamSet,
}

pub fn layer_weight(k: usize) -> String {
    format!("{PREFIX}.layer{k}.weight")
}

pub fn layer_bias(k: usize) -> String {
    format!("{PREFIX}.layer{k}.bias")
}

/// Builds the network with identity-plus-noise weights and zero biases, so
/// the untrained model is close to the identity map.
pub fn build_can(config: CanConfig, seed: u64) -> Result<CanModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scheme = InitScheme::IdentityPlusNoise { noise_std: config.init_noise_std };
    let mut params = ParamSet::new();
    for (k, shape) in config.kernel_shapes().into_iter().enumerate() {
        params.insert(layer_weight(k), init_kernel(scheme, shape, &mut rng));
        params.insert(layer_bias(k), Tensor::zeros(&[shape[3]]));
    }
    Ok(CanModel { config, params })
}

impl CanModel {
    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn check_size(&self, image: &Tensor) -> Result<()> {
        let s = image.shape();
        if s.len() != 3 || s[2] != IMAGE_CHANNELS {
            return Err(Error::shape("can input", format!("expected [h, w, 3], got {s:?}")));
        }
        if self.config.padding == PaddingMode::Symmetric {
            let (min, dilation) = self.config.min_size();
            if s[0] < min || s[1] < min {
                return Err(Error::ImageTooSmall { height: s[0], width: s[1], dilation, min });
            }
        }
        Ok(())
    }

    /// Applies the network to `image`; weights become parameter leaves when
    /// `trainable`.
    pub fn graph(&self, image: &Expr, trainable: bool) -> Expr {
        let mut x = image.clone();
        for k in 0..self.config.depth {
            let w = Expr::leaf(layer_weight(k), trainable);
            let b = Expr::leaf(layer_bias(k), trainable);
            let dilation = if self.config.kernel_size(k) == 1 { 1 } else { self.config.dilations[k] };
            x = x.conv2d(&w, &b, ConvSpec::new(dilation, 1, self.config.padding));
            if k + 1 < self.config.depth {
                x = x.leaky_relu(self.config.leaky_slope);
            }
        }
        x
    }

    /// Enhanced image, unclamped.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        self.check_size(image)?;
        let x = Expr::input("image");
        let y = self.graph(&x, false);
        let mut b = Bindings::new();
        b.bind_params(&self.params).bind_ref("image", image);
        Ok(Evaluation::forward(&y, &b)?.root().clone())
    }
}

/// `model(x)`.
pub fn can_forward(model: &CanModel, image: &Tensor) -> Result<Tensor> {
    model.forward(image)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        assert_eq!(default_schedule(10), vec![1, 2, 4, 8, 16, 32, 64, 128, 1, 1]);
        assert_eq!(default_schedule(3), vec![1, 1, 1]);
        assert_eq!(literal_schedule(10), vec![1, 2, 4, 8, 16, 32, 64, 128, 256, 1]);
        assert_eq!(default_schedule(1), vec![1]);
    }

    #[test]
    fn receptive_fields() {
        assert_eq!(receptive_field(&CanConfig::with_depth(1, 4)), 1);
        assert_eq!(receptive_field(&CanConfig::with_depth(3, 4)), 5);
        assert_eq!(receptive_field(&CanConfig::default()), 513);
        assert_eq!(receptive_field(&CanConfig::desk()), 65);
    }

    #[test]
    fn small_network_layout() {
        let m = build_can(CanConfig::with_depth(3, 4), 0).unwrap();
        let shapes: Vec<_> = (0..3).map(|k| m.params.get(&layer_weight(k)).unwrap().shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![3, 3, 3, 4], vec![3, 3, 4, 4], vec![1, 1, 4, 3]]);
    }

    #[test]
    fn invalid_configs() {
        assert!(build_can(CanConfig::with_depth(0, 32), 0).is_err());
        assert!(build_can(CanConfig::with_depth(3, 0), 0).is_err());
        let mut c = CanConfig::with_depth(4, 8);
        c.dilations = vec![1, 2, 1];
        assert!(build_can(c.clone(), 0).is_err());
        c.dilations = vec![1, 2, 1, 2];
        assert!(build_can(c, 0).is_err());
    }

    #[test]
    fn too_small_names_dilation() {
        let m = build_can(CanConfig::desk(), 0).unwrap();
        match m.forward(&Tensor::zeros(&[15, 40, 3])) {
            Err(Error::ImageTooSmall { dilation, min, .. }) => assert_eq!((dilation, min), (16, 16)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
