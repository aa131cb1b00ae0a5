//! Analytic reference operators and synthetic degradations.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::quality::{RatingDistribution, BUCKETS};
use crate::tensor::Tensor;

use super::image::Image;

/// Standard deviation of synthetic rating distributions, in score units.
pub const RATING_STD: f64 = 1.4;

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidParameter(format!("{name} {v} outside [0, 1]")));
    }
    Ok(())
}

fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

/// `u = x^gamma_lift`, then a blend `(1 - s) u + s * smoothstep(u)` that adds
/// an S-shaped contrast curve. Monotone in every pixel.
pub fn tone_operator(x: &Image, gamma_lift: f64, s_curve_strength: f64) -> Result<Image> {
    if !(gamma_lift > 0.0 && gamma_lift.is_finite()) {
        return Err(Error::InvalidParameter(format!("gamma_lift {gamma_lift} must be positive")));
    }
    check_unit("s-curve strength", s_curve_strength)?;
    let s = s_curve_strength;
    let t = x.tensor().map(|v| {
        let u = v.powf(gamma_lift);
        ((1.0 - s) * u + s * smoothstep(u)).clamp(0.0, 1.0)
    });
    Ok(Image::from_tensor_unchecked(t))
}

/// Haze model `clean * t + airlight * (1 - t)`; returns `(hazy, clean)`.
pub fn haze_pair(clean: &Image, transmission: f64, airlight: f64) -> Result<(Image, Image)> {
    if !(transmission > 0.0 && transmission <= 1.0) {
        return Err(Error::InvalidParameter(format!("transmission {transmission} outside (0, 1]")));
    }
    check_unit("airlight", airlight)?;
    let hazy = clean.tensor().map(|v| (v * transmission + airlight * (1.0 - transmission)).clamp(0.0, 1.0));
    Ok((Image::from_tensor_unchecked(hazy), clean.clone()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DegradeKind {
    Blur,
    Noise,
    ContrastLoss,
}

impl DegradeKind {
    pub const ALL: [DegradeKind; 3] = [DegradeKind::Blur, DegradeKind::Noise, DegradeKind::ContrastLoss];
}

impl FromStr for DegradeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blur" => Ok(DegradeKind::Blur),
            "noise" => Ok(DegradeKind::Noise),
            "contrast-loss" => Ok(DegradeKind::ContrastLoss),
            other => Err(Error::InvalidParameter(format!("unknown degradation `{other}`"))),
        }
    }
}

impl fmt::Display for DegradeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DegradeKind::Blur => "blur",
            DegradeKind::Noise => "noise",
            DegradeKind::ContrastLoss => "contrast-loss",
        })
    }
}

/// Largest blur standard deviation, in pixels.
pub const MAX_BLUR_STD: f64 = 3.0;
/// Largest additive noise standard deviation.
pub const MAX_NOISE_STD: f64 = 0.2;
/// Contrast is scaled by `1 - MAX_CONTRAST_LOSS * severity` around mid-gray.
pub const MAX_CONTRAST_LOSS: f64 = 0.8;

/// Applies a degradation whose strength is affine in `severity`; severity 0
/// returns the input bit for bit. `seed` only matters for noise.
pub fn degrade(x: &Image, severity: f64, kind: DegradeKind, seed: u64) -> Result<Image> {
    check_unit("severity", severity)?;
    if severity == 0.0 {
        return Ok(x.clone());
    }
    let t = match kind {
        DegradeKind::Blur => gaussian_blur(x.tensor(), MAX_BLUR_STD * severity),
        DegradeKind::Noise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, MAX_NOISE_STD * severity).expect("finite std");
            let data = x.data().iter().map(|v| v + normal.sample(&mut rng)).collect();
            Tensor::from_parts(x.tensor().shape().to_vec(), data)
        }
        DegradeKind::ContrastLoss => {
            let k = 1.0 - MAX_CONTRAST_LOSS * severity;
            x.tensor().map(|v| 0.5 + (v - 0.5) * k)
        }
    };
    Image::clamped(t)
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian blur with edge-inclusive mirroring at the borders.
pub fn gaussian_blur(x: &Tensor, std: f64) -> Tensor {
    let radius = (3.0 * std).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * std * std)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let src = x.data();
    let mut tmp = vec![0.0; src.len()];
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                tmp[(i * w + j) * 3 + c] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * src[(i * w + mirror(j as isize + k as isize - radius, w)) * 3 + c])
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                out[(i * w + j) * 3 + c] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * tmp[(mirror(i as isize + k as isize - radius, h) * w + j) * 3 + c])
                    .sum();
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// Target mean score of a severity: 9 for pristine, 2 for the worst.
pub fn severity_mean(severity: f64) -> f64 {
    9.0 - 7.0 * severity
}

/// Gaussian of mean `9 - 7 severity` and std 1.4 integrated over the unit
/// bucket intervals around 1..=10; the tails beyond the outer buckets are
/// folded into them.
pub fn synth_rating(severity: f64) -> Result<RatingDistribution> {
    check_unit("severity", severity)?;
    let m = severity_mean(severity);
    let cdf = |edge: f64| normal_cdf((edge - m) / RATING_STD);
    let probs: Vec<f64> = (1..=BUCKETS)
        .map(|k| {
            let lo = if k == 1 { 0.0 } else { cdf(k as f64 - 0.5) };
            let hi = if k == BUCKETS { 1.0 } else { cdf(k as f64 + 0.5) };
            hi - lo
        })
        .collect();
    let total: f64 = probs.iter().sum();
    RatingDistribution::new(probs.into_iter().map(|p| p / total).collect())
}
