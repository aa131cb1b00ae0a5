//! Seeded weight initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Gaussian with standard deviation `sqrt(2 / fan_in)`.
    FanInGaussian,
    /// Channel identity on the center tap plus Gaussian noise.
    IdentityPlusNoise { noise_std: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitSpec {
    pub scheme: InitScheme,
    pub seed: u64,
}

/// Kernel shape `[kh, kw, in, out]` of one layer.
pub type KernelShape = [usize; 4];

/// Draws `(weights, bias)` for each layer in order. Biases start at zero.
pub fn init_parameters(spec: InitSpec, shapes: &[KernelShape]) -> Vec<(Tensor, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    shapes
        .iter()
        .map(|&shape| {
            let weights = init_kernel(spec.scheme, shape, &mut rng);
            (weights, Tensor::zeros(&[shape[3]]))
        })
        .collect()
}

pub(crate) fn init_kernel(scheme: InitScheme, shape: KernelShape, rng: &mut ChaCha8Rng) -> Tensor {
    let [kh, kw, cin, cout] = shape;
    let n = kh * kw * cin * cout;
    let std = match scheme {
        InitScheme::FanInGaussian => (2.0 / (kh * kw * cin) as f64).sqrt(),
        InitScheme::IdentityPlusNoise { noise_std } => noise_std,
    };
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut data: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    if let InitScheme::IdentityPlusNoise { .. } = scheme {
        let center = (kh / 2) * kw + kw / 2;
        for c in 0..cin.min(cout) {
            data[(center * cin + c) * cout + c] += 1.0;
        }
    }
    Tensor::from_parts(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_parameters() {
        let spec = InitSpec { scheme: InitScheme::FanInGaussian, seed: 11 };
        let shapes = [[3, 3, 3, 8], [1, 1, 8, 2]];
        assert_eq!(init_parameters(spec, &shapes), init_parameters(spec, &shapes));
        let other = InitSpec { seed: 12, ..spec };
        assert_ne!(init_parameters(spec, &shapes), init_parameters(other, &shapes));
    }

    #[test]
    fn identity_plus_noise_center_taps() {
        let spec = InitSpec { scheme: InitScheme::IdentityPlusNoise { noise_std: 1e-3 }, seed: 3 };
        let (w, b) = &init_parameters(spec, &[[3, 3, 6, 6]])[0];
        assert!(b.data().iter().all(|&v| v == 0.0));
        for ci in 0..6 {
            for co in 0..6 {
                let v = w.data()[(4 * 6 + ci) * 6 + co];
                let target = if ci == co { 1.0 } else { 0.0 };
                assert!((v - target).abs() < 1e-2, "tap ({ci},{co}) = {v}");
            }
        }
    }

    #[test]
    fn fan_in_std_matches_he_scale() {
        let spec = InitSpec { scheme: InitScheme::FanInGaussian, seed: 5 };
        // fan_in = 9 * 32, 9 * 32 * 32 = 9216 draws per layer, two layers
        let params = init_parameters(spec, &[[3, 3, 32, 32], [3, 3, 32, 32]]);
        let draws: Vec<f64> = params.iter().flat_map(|(w, _)| w.data().to_vec()).collect();
        assert!(draws.len() >= 10_000);
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let std = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let expected = (2.0f64 / 288.0).sqrt();
        assert!((std / expected - 1.0).abs() < 0.1, "std {std} vs {expected}");
    }
}
