//! 2x2 stride-2 max pooling. Odd trailing rows/columns are dropped (floor
//! halving). Ties route the gradient to the first element in row-major order.

use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let s = input.shape();
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut out = Tensor::zeros(Shape::new(s.b, s.c, oh, ow));
    let mut argmax = vec![0u32; out.numel()];
    let mut oi = 0;
    for b in 0..s.b {
        for c in 0..s.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::from_f64(f64::NEG_INFINITY);
                    let mut best_idx = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let (y, x) = (2 * oy + dy, 2 * ox + dx);
                            let idx = ((b * s.c + c) * s.h + y) * s.w + x;
                            let v = input.data()[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    out.data_mut()[oi] = best;
                    argmax[oi] = best_idx as u32;
                    oi += 1;
                }
            }
        }
    }
    (out, argmax)
}

pub fn maxpool2_backward<T: Scalar>(input_shape: Shape, argmax: &[u32], d_out: &Tensor<T>) -> Tensor<T> {
    let mut d_in = Tensor::zeros(input_shape);
    for (&idx, &g) in argmax.iter().zip(d_out.data()) {
        d_in.data_mut()[idx as usize] += g;
    }
    d_in
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_of_window_and_one_hot_gradient() {
        let input = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, argmax) = maxpool2_forward(&input);
        assert_eq!(out.data(), &[4.0]);
        let d_out = Tensor::scalar(1.0);
        let d_in = maxpool2_backward(input.shape(), &argmax, &d_out);
        assert_eq!(d_in.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn tie_breaks_to_first_in_row_major_order() {
        let input = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        let (_, argmax) = maxpool2_forward(&input);
        assert_eq!(argmax, vec![0]);
    }

    #[test]
    fn floor_halving_drops_trailing() {
        let input = Tensor::<f64>::full(Shape::new(1, 2, 5, 7), 3.0);
        let (out, _) = maxpool2_forward(&input);
        assert_eq!(out.shape(), Shape::new(1, 2, 2, 3));
        assert!(out.data().iter().all(|&v| v == 3.0));
    }
}
