//! Deterministic parameter initialization.
//!
//! All randomness in the library flows through one seedable generator
//! (ChaCha8); the algorithm name is recorded in saved model files so a
//! seed fully determines a model.

use rand_distr::{Distribution, Normal};

use super::{Scalar, Tensor};

/// The library-wide pseudo-random generator.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Identifier written into model files next to the seed.
pub const RNG_ALGORITHM: &str = "chacha8";

/// Generator seeded from a 64-bit value.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// He-style Gaussian initialization adjusted for a leaky activation:
/// i.i.d. zero-mean draws with standard deviation
/// `sqrt(2 / ((1 + slope^2) * fan_in))`.
pub fn he_init<T: Scalar>(dims: &[usize], fan_in: usize, slope: f64, rng: &mut Rng) -> Tensor<T> {
    assert!(fan_in > 0, "fan_in must be positive");
    let std = (2.0 / ((1.0 + slope * slope) * fan_in as f64)).sqrt();
    gaussian_init(dims, std, rng)
}

/// I.i.d. zero-mean Gaussian draws with the given standard deviation.
pub fn gaussian_init<T: Scalar>(dims: &[usize], std: f64, rng: &mut Rng) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("valid std");
    let n: usize = dims.iter().product();
    let values: Vec<T> = (0..n).map(|_| T::from_f64(normal.sample(rng))).collect();
    Tensor::from_vec(dims, values).expect("dims match draw count")
}

/// Fixed 4x4 kernel that makes the 2x transposed convolution perform
/// bilinear interpolation; away from the zero-padded border a constant
/// image maps to the same constant.
pub fn bilinear_upsample_kernel<T: Scalar>() -> Tensor<T> {
    let taps = [0.25, 0.75, 0.75, 0.25];
    let mut values = Vec::with_capacity(16);
    for i in 0..4 {
        for j in 0..4 {
            values.push(T::from_f64(taps[i] * taps[j]));
        }
    }
    Tensor::from_vec(&[1, 1, 4, 4], values).expect("4x4 kernel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_tensors() {
        let a: Tensor<f32> = he_init(&[4, 4], 16, 0.2, &mut seeded_rng(99));
        let b: Tensor<f32> = he_init(&[4, 4], 16, 0.2, &mut seeded_rng(99));
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn he_init_statistics() {
        // 1e6 draws: sample variance within 5% of 2 / (1.04 * fan_in) and
        // mean within 3 standard errors of zero.
        let fan_in = 9 * 64;
        let slope = 0.2;
        let t: Tensor<f64> = he_init(&[1_000_000], fan_in, slope, &mut seeded_rng(42));
        let n = t.numel() as f64;
        let mean = t.values().iter().sum::<f64>() / n;
        let var = t.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let expected_var = 2.0 / ((1.0 + slope * slope) * fan_in as f64);
        assert!(
            (var - expected_var).abs() < 0.05 * expected_var,
            "variance {var} vs expected {expected_var}"
        );
        let stderr = (expected_var / n).sqrt();
        assert!(mean.abs() < 3.0 * stderr, "mean {mean} exceeds 3 standard errors {stderr}");
    }

    #[test]
    fn bilinear_kernel_partitions_unity_in_interior() {
        // Away from the border every output pixel of the stride-2
        // upsampling receives weights summing to 1, so a constant input
        // stays constant there.
        let k: Tensor<f64> = bilinear_upsample_kernel();
        let shape = crate::tensor::kernels::UpconvShape::resolve(&[1, 1, 4, 4], &[1, 1, 4, 4])
            .unwrap();
        let out = crate::tensor::kernels::upconv_forward(&[0.6; 16], k.values(), None, &shape);
        for y in 1..7 {
            for x in 1..7 {
                let v = out[y * 8 + x];
                assert!((v - 0.6).abs() < 1e-12, "pixel ({y},{x}): {v}");
            }
        }
    }
}
