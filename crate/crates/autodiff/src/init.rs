//! Weight initializers. Gaussian draws use Box-Muller so the byte stream of
//! the seeded generator fully determines every value.

use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

fn normal_draw<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; u1 is kept away from zero.
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// He/fan-in scaled normal init for conv kernels shaped (out, in, kh, kw).
pub fn kaiming_conv<T: Scalar, R: Rng>(rng: &mut R, shape: Shape) -> Tensor<T> {
    let fan_in = (shape.c * shape.h * shape.w).max(1);
    let std = (2.0 / fan_in as f64).sqrt();
    let data = (0..shape.numel()).map(|_| T::from_f64(normal_draw(rng) * std)).collect();
    Tensor::from_vec(shape, data).expect("kaiming_conv shape")
}

pub fn normal_vec<T: Scalar, R: Rng>(rng: &mut R, len: usize, std: f64) -> Tensor<T> {
    let data = (0..len).map(|_| T::from_f64(normal_draw(rng) * std)).collect();
    Tensor::from_vec(Shape::vec(len), data).expect("normal_vec shape")
}

pub fn constant_vec<T: Scalar>(len: usize, value: f64) -> Tensor<T> {
    Tensor::full(Shape::vec(len), T::from_f64(value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn kaiming_std_tracks_fan_in() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let t: Tensor<f64> = kaiming_conv(&mut rng, Shape::new(64, 32, 3, 3));
        let n = t.numel() as f64;
        let mean: f64 = t.data().iter().sum::<f64>() / n;
        let var: f64 = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expect = 2.0 / (32.0 * 9.0);
        assert!((var - expect).abs() / expect < 0.15, "var {var} vs {expect}");
    }

    #[test]
    fn deterministic_under_seed() {
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let ta: Tensor<f32> = kaiming_conv(&mut a, Shape::new(4, 4, 3, 3));
        let tb: Tensor<f32> = kaiming_conv(&mut b, Shape::new(4, 4, 3, 3));
        assert_eq!(ta, tb);
    }
}
