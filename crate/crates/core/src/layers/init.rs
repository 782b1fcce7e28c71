//! Weight initializers.

use std::f64::consts::PI;

use rand::Rng;

use crate::tensor::{ComplexTensor, Tensor};

/// Complex kernel with Rayleigh magnitudes of scale `1 / sqrt(fan_in + fan_out)`
/// and uniform phase.
pub fn complex_glorot<R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> ComplexTensor {
    let sigma = 1.0 / ((fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let (mut re, mut im) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        let mag = sigma * (-2.0 * u.ln()).sqrt();
        let phase = rng.gen_range(-PI..PI);
        re.push(mag * phase.cos());
        im.push(mag * phase.sin());
    }
    ComplexTensor::new(
        Tensor::new(shape, re).expect("shape"),
        Tensor::new(shape, im).expect("shape"),
    )
    .expect("same shape")
}

/// Uniform in `±1 / sqrt(fan_in)`.
pub fn uniform_fan_in<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rayleigh_second_moment() {
        // E|w|^2 = 2 sigma^2 for Rayleigh(sigma)
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = complex_glorot(&[20000], 30, 20, &mut rng);
        let m2 = (w.re.sum_squares() + w.im.sum_squares()) / 20000.0;
        assert!((m2 - 2.0 / 50.0).abs() < 0.002, "{m2}");
        let u = uniform_fan_in(&[1000], 16, &mut rng);
        assert!(u.max_abs() <= 0.25);
    }
}
