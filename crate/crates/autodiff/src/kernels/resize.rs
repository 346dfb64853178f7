//! Bilinear 2x upsampling with align-corners-false sampling.
//!
//! Output pixel i samples the input at (i + 0.5) / 2 - 0.5, clamped to the
//! valid range, so every output is a convex combination of the four nearest
//! input samples.

use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Source coordinate and lerp weight for one output index.
fn src_coord(i: usize, in_len: usize) -> (usize, usize, f64) {
    let pos = (i as f64 + 0.5) / 2.0 - 0.5;
    let pos = pos.clamp(0.0, (in_len - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, pos - lo as f64)
}

pub fn upsample2x_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let (oh, ow) = (s.h * 2, s.w * 2);
    let mut out = Tensor::zeros(Shape::new(s.b, s.c, oh, ow));
    let xw: Vec<(usize, usize, f64)> = (0..ow).map(|x| src_coord(x, s.w)).collect();
    let yw: Vec<(usize, usize, f64)> = (0..oh).map(|y| src_coord(y, s.h)).collect();
    for b in 0..s.b {
        for c in 0..s.c {
            for (oy, &(y0, y1, fy)) in yw.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xw.iter().enumerate() {
                    let v00 = input.at(b, c, y0, x0).to_f64();
                    let v01 = input.at(b, c, y0, x1).to_f64();
                    let v10 = input.at(b, c, y1, x0).to_f64();
                    let v11 = input.at(b, c, y1, x1).to_f64();
                    let top = v00 * (1.0 - fx) + v01 * fx;
                    let bot = v10 * (1.0 - fx) + v11 * fx;
                    *out.at_mut(b, c, oy, ox) = T::from_f64(top * (1.0 - fy) + bot * fy);
                }
            }
        }
    }
    out
}

pub fn upsample2x_backward<T: Scalar>(input_shape: Shape, d_out: &Tensor<T>) -> Tensor<T> {
    let s = input_shape;
    let os = d_out.shape();
    let mut d_in = Tensor::zeros(s);
    let xw: Vec<(usize, usize, f64)> = (0..os.w).map(|x| src_coord(x, s.w)).collect();
    let yw: Vec<(usize, usize, f64)> = (0..os.h).map(|y| src_coord(y, s.h)).collect();
    for b in 0..s.b {
        for c in 0..s.c {
            for (oy, &(y0, y1, fy)) in yw.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xw.iter().enumerate() {
                    let g = d_out.at(b, c, oy, ox).to_f64();
                    *d_in.at_mut(b, c, y0, x0) += T::from_f64(g * (1.0 - fx) * (1.0 - fy));
                    *d_in.at_mut(b, c, y0, x1) += T::from_f64(g * fx * (1.0 - fy));
                    *d_in.at_mut(b, c, y1, x0) += T::from_f64(g * (1.0 - fx) * fy);
                    *d_in.at_mut(b, c, y1, x1) += T::from_f64(g * fx * fy);
                }
            }
        }
    }
    d_in
}
