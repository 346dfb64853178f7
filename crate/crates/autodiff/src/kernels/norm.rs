//! Group normalization with per-channel affine parameters.
//!
//! Statistics are computed per (batch, group) over (C/G, H, W), so the op is
//! deterministic and batch-size independent — no running statistics.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Saved forward statistics, one entry per (batch, group).
pub struct GroupNormStats<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
}

pub fn group_norm_forward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    groups: usize,
    eps: f64,
) -> (Tensor<T>, GroupNormStats<T>) {
    let s = input.shape();
    let gc = s.c / groups;
    let n = gc * s.h * s.w;
    let mut out = Tensor::zeros(s);
    let mut stats = GroupNormStats { mean: Vec::with_capacity(s.b * groups), inv_std: Vec::with_capacity(s.b * groups) };
    let plane = s.h * s.w;
    for b in 0..s.b {
        for g in 0..groups {
            let start = (b * s.c + g * gc) * plane;
            let chunk = &input.data()[start..start + n];
            let mean = chunk.iter().map(|v| v.to_f64()).sum::<f64>() / n as f64;
            let var = chunk.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / n as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            stats.mean.push(T::from_f64(mean));
            stats.inv_std.push(T::from_f64(inv_std));
            for ci in 0..gc {
                let c = g * gc + ci;
                let (gm, bt) = (gamma.data()[c].to_f64(), beta.data()[c].to_f64());
                let src = &input.data()[start + ci * plane..start + (ci + 1) * plane];
                let dst = &mut out.data_mut()[start + ci * plane..start + (ci + 1) * plane];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = T::from_f64((v.to_f64() - mean) * inv_std * gm + bt);
                }
            }
        }
    }
    (out, stats)
}

/// Returns (d_input, d_gamma, d_beta).
pub fn group_norm_backward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &GroupNormStats<T>,
    groups: usize,
    d_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let s = input.shape();
    let gc = s.c / groups;
    let n = gc * s.h * s.w;
    let plane = s.h * s.w;
    let mut d_in = Tensor::zeros(s);
    let mut d_gamma = Tensor::zeros(gamma.shape());
    let mut d_beta = Tensor::zeros(gamma.shape());

    for b in 0..s.b {
        for g in 0..groups {
            let start = (b * s.c + g * gc) * plane;
            let mean = stats.mean[b * groups + g].to_f64();
            let inv_std = stats.inv_std[b * groups + g].to_f64();

            // First pass: reductions sum(dxhat) and sum(dxhat * xhat),
            // accumulating the affine gradients along the way.
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for ci in 0..gc {
                let c = g * gc + ci;
                let gm = gamma.data()[c].to_f64();
                let mut dg = 0.0;
                let mut db = 0.0;
                for i in 0..plane {
                    let idx = start + ci * plane + i;
                    let xhat = (input.data()[idx].to_f64() - mean) * inv_std;
                    let dy = d_out.data()[idx].to_f64();
                    dg += dy * xhat;
                    db += dy;
                    let dxhat = dy * gm;
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                d_gamma.data_mut()[c] += T::from_f64(dg);
                d_beta.data_mut()[c] += T::from_f64(db);
            }

            let inv_n = 1.0 / n as f64;
            for ci in 0..gc {
                let c = g * gc + ci;
                let gm = gamma.data()[c].to_f64();
                for i in 0..plane {
                    let idx = start + ci * plane + i;
                    let xhat = (input.data()[idx].to_f64() - mean) * inv_std;
                    let dxhat = d_out.data()[idx].to_f64() * gm;
                    let dx = inv_std * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
                    d_in.data_mut()[idx] = T::from_f64(dx);
                }
            }
        }
    }
    (d_in, d_gamma, d_beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn normalizes_to_zero_mean_unit_var() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let input = Tensor::from_vec(
            Shape::new(2, 4, 3, 3),
            (0..72).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>(),
        )
        .unwrap();
        let gamma = Tensor::full(Shape::vec(4), 1.0);
        let beta = Tensor::zeros(Shape::vec(4));
        let (out, _) = group_norm_forward(&input, &gamma, &beta, 2, 1e-5);
        // Each (b, group) chunk spans 2 channels x 9 pixels = 18 values.
        for b in 0..2 {
            for g in 0..2 {
                let start = (b * 4 + g * 2) * 9;
                let chunk = &out.data()[start..start + 18];
                let mean: f64 = chunk.iter().sum::<f64>() / 18.0;
                let var: f64 = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 18.0;
                assert!(mean.abs() < 1e-10);
                assert!((var - 1.0).abs() < 1e-3);
            }
        }
    }
}
