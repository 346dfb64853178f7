//! 2-D convolution via im2col + gemm, with same-padding.
//!
//! Padding convention: zero padding, split symmetrically with the extra
//! pixel on the bottom/right when the total is odd. Output spatial size is
//! ceil(in/stride), so stride-1 convolutions preserve shape for any kernel.
//!
//! The whole batch is lowered into one (K x B*M) column matrix so each conv
//! issues a handful of large gemm calls instead of B tiny ones. At stride 1
//! every kernel tap row is a contiguous source segment, so lowering and its
//! transpose are memcpy/axpy loops rather than per-element index math.
//! Per-image reductions (kernel gradients) are summed in batch order so
//! results stay deterministic regardless of thread scheduling.

use rayon::prelude::*;

use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub stride: usize,
    pub dilation: usize,
    pub kh: usize,
    pub kw: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn same(in_h: usize, in_w: usize, kh: usize, kw: usize, stride: usize, dilation: usize) -> Self {
        let out_h = in_h.div_ceil(stride);
        let out_w = in_w.div_ceil(stride);
        let span_h = (kh - 1) * dilation + 1;
        let span_w = (kw - 1) * dilation + 1;
        let pad_h = ((out_h - 1) * stride + span_h).saturating_sub(in_h);
        let pad_w = ((out_w - 1) * stride + span_w).saturating_sub(in_w);
        ConvGeom {
            stride,
            dilation,
            kh,
            kw,
            out_h,
            out_w,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        }
    }
}

/// Raw pointer wrapper so disjoint regions of one buffer can be written from
/// the rayon pool.
#[derive(Clone, Copy)]
struct SendPtr<T>(*mut T);
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

impl<T> SendPtr<T> {
    // Method (not field) access so closures capture the wrapper, which is Sync.
    fn get(self) -> *mut T {
        self.0
    }
}

/// Valid output-column range of a kernel tap at stride 1:
/// ix = ox + kx*dilation - pad_left must land in [0, w).
fn tap_range(kx: usize, dilation: usize, pad_left: usize, w: usize) -> (usize, usize, isize) {
    let shift = kx as isize * dilation as isize - pad_left as isize;
    let lo = (-shift).max(0) as usize;
    let hi = ((w as isize - shift).min(w as isize)).max(lo as isize) as usize;
    (lo, hi, shift)
}

/// Unpack one image into columns `col_offset..col_offset+m` of a (K x B*M)
/// matrix with row stride `ld`.
fn im2col_into<T: Scalar>(
    img: &[T],
    cin: usize,
    h: usize,
    w: usize,
    g: &ConvGeom,
    cols: SendPtr<T>,
    ld: usize,
    col_offset: usize,
) {
    let mut k_idx = 0;
    for ci in 0..cin {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row_base = k_idx * ld + col_offset;
                k_idx += 1;
                if g.stride == 1 {
                    // One contiguous copy covers every valid row of this tap
                    // (consecutive shifted rows tile contiguously in both the
                    // plane and the cols row); the x-padding wrap between
                    // rows is zeroed afterwards.
                    let (lo, hi, shift) = tap_range(kx, g.dilation, g.pad_left, w);
                    let yshift = ky as isize * g.dilation as isize - g.pad_top as isize;
                    let oy_lo = (-yshift).max(0) as usize;
                    let oy_hi = ((h as isize - yshift).min(h as isize)).max(oy_lo as isize) as usize;
                    let dst = unsafe {
                        std::slice::from_raw_parts_mut(cols.get().add(row_base), h * w)
                    };
                    if lo >= hi || oy_lo >= oy_hi {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    dst[..oy_lo * w + lo].fill(T::ZERO);
                    dst[(oy_hi - 1) * w + hi..].fill(T::ZERO);
                    let src0 = ((oy_lo as isize + yshift) * w as isize + shift + lo as isize) as usize;
                    let len = (oy_hi - 1 - oy_lo) * w + (hi - lo);
                    dst[oy_lo * w + lo..(oy_hi - 1) * w + hi].copy_from_slice(&plane[src0..src0 + len]);
                    if lo > 0 || hi < w {
                        for oy in oy_lo..oy_hi - 1 {
                            dst[oy * w + hi..(oy + 1) * w + lo].fill(T::ZERO);
                        }
                    }
                } else {
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad_top as isize;
                        let dst = unsafe {
                            std::slice::from_raw_parts_mut(cols.get().add(row_base + oy * g.out_w), g.out_w)
                        };
                        if iy < 0 || iy >= h as isize {
                            dst.fill(T::ZERO);
                            continue;
                        }
                        let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx * g.dilation) as isize - g.pad_left as isize;
                            *d = if ix < 0 || ix >= w as isize { T::ZERO } else { src_row[ix as usize] };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add columns `col_offset..col_offset+m` of a (K x B*M) gradient
/// matrix back into one image gradient.
fn col2im_add<T: Scalar>(
    cols: &[T],
    ld: usize,
    col_offset: usize,
    cin: usize,
    h: usize,
    w: usize,
    g: &ConvGeom,
    dimg: &mut [T],
) {
    let mut k_idx = 0;
    for ci in 0..cin {
        let plane = &mut dimg[ci * h * w..(ci + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row_base = k_idx * ld + col_offset;
                k_idx += 1;
                if g.stride == 1 {
                    let (lo, hi, shift) = tap_range(kx, g.dilation, g.pad_left, w);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..g.out_h {
                        let iy = oy as isize + ky as isize * g.dilation as isize - g.pad_top as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &cols[row_base + oy * w + lo..row_base + oy * w + hi];
                        let d0 = (lo as isize + shift) as usize;
                        let dst = &mut plane[iy as usize * w + d0..iy as usize * w + d0 + (hi - lo)];
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                } else {
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad_top as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let src = &cols[row_base + oy * g.out_w..row_base + (oy + 1) * g.out_w];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kx * g.dilation) as isize - g.pad_left as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// gemm C(m x n) = A(m x k) @ B(k x n) [+ beta * C], with the column range
/// split across the rayon pool.
#[allow(clippy::too_many_arguments)]
fn par_gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (isize, isize),
    b: &[T],
    (rsb, csb): (isize, isize),
    beta: T,
    c: &mut [T],
    ldc: usize,
) {
    let threads = rayon::current_num_threads().max(1);
    let chunk = n.div_ceil(threads).max(256);
    let blocks: Vec<(usize, usize)> = (0..n)
        .step_by(chunk)
        .map(|start| (start, (start + chunk).min(n)))
        .collect();
    let a_ptr = SendPtr(a.as_ptr() as *mut T);
    let b_ptr = SendPtr(b.as_ptr() as *mut T);
    let c_ptr = SendPtr(c.as_mut_ptr());
    blocks.into_par_iter().for_each(|(lo, hi)| unsafe {
        T::gemm(
            m,
            k,
            hi - lo,
            T::ONE,
            a_ptr.get(),
            rsa,
            csa,
            b_ptr.get().offset(csb * lo as isize),
            rsb,
            csb,
            beta,
            c_ptr.get().add(lo),
            ldc as isize,
            1,
        );
    });
}

fn lower_batch<T: Scalar>(input: &Tensor<T>, g: &ConvGeom) -> (Vec<T>, usize) {
    let is = input.shape();
    let (cin, h, w) = (is.c, is.h, is.w);
    let k = cin * g.kh * g.kw;
    let m = g.out_h * g.out_w;
    let ld = is.b * m;
    let mut cols = vec![T::ZERO; k * ld];
    let ptr = SendPtr(cols.as_mut_ptr());
    let in_data = input.data();
    (0..is.b).into_par_iter().for_each(|b| {
        im2col_into(&in_data[b * cin * h * w..(b + 1) * cin * h * w], cin, h, w, g, ptr, ld, b * m);
    });
    (cols, ld)
}

/// Forward convolution. `kernel` is (cout, cin, kh, kw).
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    let is = input.shape();
    let ks = kernel.shape();
    let cout = ks.b;
    let k = is.c * g.kh * g.kw;
    let m = g.out_h * g.out_w;
    let (cols, ld) = lower_batch(input, g);

    // scratch (cout x B*M) = kernel (cout x K) @ cols (K x B*M)
    let mut scratch = vec![T::ZERO; cout * ld];
    par_gemm(cout, k, ld, kernel.data(), (k as isize, 1), &cols, (ld as isize, 1), T::ZERO, &mut scratch, ld);

    // Scatter (cout, b*M+j) -> (b, cout, j).
    let mut out = Tensor::zeros(Shape::new(is.b, cout, g.out_h, g.out_w));
    let scratch_ref = &scratch;
    out.data_mut().par_chunks_mut(cout * m).enumerate().for_each(|(b, img)| {
        for co in 0..cout {
            img[co * m..(co + 1) * m].copy_from_slice(&scratch_ref[co * ld + b * m..co * ld + (b + 1) * m]);
        }
    });
    out
}

/// Backward convolution: returns (d_input, d_kernel); either may be skipped.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    g: &ConvGeom,
    d_out: &Tensor<T>,
    need_d_input: bool,
    need_d_kernel: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let is = input.shape();
    let ks = kernel.shape();
    let (cin, h, w) = (is.c, is.h, is.w);
    let cout = ks.b;
    let k = cin * g.kh * g.kw;
    let m = g.out_h * g.out_w;
    let ld = is.b * m;

    // Gather d_out (b, cout, j) -> (cout x B*M).
    let mut dout_flat = vec![T::ZERO; cout * ld];
    {
        let ptr = SendPtr(dout_flat.as_mut_ptr());
        let dd = d_out.data();
        (0..is.b).into_par_iter().for_each(|b| {
            for co in 0..cout {
                let src = &dd[(b * cout + co) * m..(b * cout + co + 1) * m];
                let dst = unsafe { std::slice::from_raw_parts_mut(ptr.get().add(co * ld + b * m), m) };
                dst.copy_from_slice(src);
            }
        });
    }

    let d_kernel = if need_d_kernel {
        let (cols, ld2) = lower_batch(input, g);
        debug_assert_eq!(ld, ld2);
        // d_kernel (cout x K) = d_out (cout x B*M) @ colsᵀ (B*M x K)
        let mut dk = Tensor::zeros(ks);
        unsafe {
            T::gemm(
                cout,
                ld,
                k,
                T::ONE,
                dout_flat.as_ptr(),
                ld as isize,
                1,
                cols.as_ptr(),
                1,
                ld as isize,
                T::ZERO,
                dk.data_mut().as_mut_ptr(),
                k as isize,
                1,
            );
        }
        Some(dk)
    } else {
        None
    };

    let d_input = if need_d_input {
        // d_cols (K x B*M) = kernelᵀ (K x cout) @ d_out (cout x B*M)
        let mut d_cols = vec![T::ZERO; k * ld];
        par_gemm(k, cout, ld, kernel.data(), (1, k as isize), &dout_flat, (ld as isize, 1), T::ZERO, &mut d_cols, ld);
        let mut d_in = Tensor::zeros(is);
        let d_cols_ref = &d_cols;
        d_in.data_mut().par_chunks_mut(cin * h * w).enumerate().for_each(|(b, dimg)| {
            col2im_add(d_cols_ref, ld, b * m, cin, h, w, g, dimg);
        });
        Some(d_in)
    } else {
        None
    };

    (d_input, d_kernel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &Tensor<f64>, kernel: &Tensor<f64>, g: &ConvGeom) -> Tensor<f64> {
        let is = input.shape();
        let ks = kernel.shape();
        let mut out = Tensor::zeros(Shape::new(is.b, ks.b, g.out_h, g.out_w));
        for b in 0..is.b {
            for co in 0..ks.b {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut acc = 0.0;
                        for ci in 0..is.c {
                            for ky in 0..g.kh {
                                for kx in 0..g.kw {
                                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad_top as isize;
                                    let ix = (ox * g.stride + kx * g.dilation) as isize - g.pad_left as isize;
                                    if iy >= 0 && iy < is.h as isize && ix >= 0 && ix < is.w as isize {
                                        acc += input.at(b, ci, iy as usize, ix as usize)
                                            * kernel.at(co, ci, ky, kx);
                                    }
                                }
                            }
                        }
                        *out.at_mut(b, co, oy, ox) = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_loop_conv() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for &(cin, cout, h, w, kh, kw, s, d) in &[
            (2usize, 3usize, 7usize, 6usize, 3usize, 3usize, 1usize, 1usize),
            (1, 2, 8, 8, 1, 5, 1, 1),
            (3, 1, 9, 5, 5, 1, 2, 1),
            (2, 2, 10, 10, 3, 3, 1, 2),
            (2, 2, 11, 7, 3, 3, 2, 3),
            (1, 4, 4, 4, 1, 1, 1, 1),
            (2, 3, 6, 9, 3, 3, 1, 3),
        ] {
            let input = Tensor::from_vec(
                Shape::new(2, cin, h, w),
                (0..2 * cin * h * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let kernel = Tensor::from_vec(
                Shape::new(cout, cin, kh, kw),
                (0..cout * cin * kh * kw).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let g = ConvGeom::same(h, w, kh, kw, s, d);
            let fast = conv2d_forward(&input, &kernel, &g);
            let slow = naive_conv(&input, &kernel, &g);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-10, "gemm conv disagrees with naive conv");
            }
        }
    }

    #[test]
    fn backward_matches_naive_via_linearity() {
        // d_input of sum(conv) equals conv of all-ones d_out with the flipped
        // kernel; check against a finite-difference on the naive forward.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let input = Tensor::from_vec(
            Shape::new(1, 2, 6, 5),
            (0..60).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>(),
        )
        .unwrap();
        let kernel = Tensor::from_vec(
            Shape::new(2, 2, 3, 3),
            (0..36).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>(),
        )
        .unwrap();
        for &(s, d) in &[(1usize, 1usize), (1, 2), (2, 1)] {
            let g = ConvGeom::same(6, 5, 3, 3, s, d);
            let out = conv2d_forward(&input, &kernel, &g);
            let d_out = Tensor::full(out.shape(), 1.0);
            let (di, dk) = conv2d_backward(&input, &kernel, &g, &d_out, true, true);
            let (di, dk) = (di.unwrap(), dk.unwrap());
            let h = 1e-6;
            for idx in [0usize, 7, 23, 59] {
                let mut p = input.clone();
                p.data_mut()[idx] += h;
                let up: f64 = conv2d_forward(&p, &kernel, &g).data().iter().sum();
                p.data_mut()[idx] -= 2.0 * h;
                let dn: f64 = conv2d_forward(&p, &kernel, &g).data().iter().sum();
                let fd = (up - dn) / (2.0 * h);
                assert!((di.data()[idx] - fd).abs() < 1e-6, "d_input s={s} d={d}");
            }
            for idx in [0usize, 5, 17, 35] {
                let mut p = kernel.clone();
                p.data_mut()[idx] += h;
                let up: f64 = conv2d_forward(&input, &p, &g).data().iter().sum();
                p.data_mut()[idx] -= 2.0 * h;
                let dn: f64 = conv2d_forward(&input, &p, &g).data().iter().sum();
                let fd = (up - dn) / (2.0 * h);
                assert!((dk.data()[idx] - fd).abs() < 1e-6, "d_kernel s={s} d={d}");
            }
        }
    }

    #[test]
    fn same_padding_preserves_shape_at_stride_one() {
        let g = ConvGeom::same(16, 16, 3, 3, 1, 1);
        assert_eq!((g.out_h, g.out_w), (16, 16));
        assert_eq!((g.pad_top, g.pad_left), (1, 1));
        let g = ConvGeom::same(5, 5, 3, 3, 1, 2); // dilated span 5
        assert_eq!((g.out_h, g.out_w), (5, 5));
        assert_eq!((g.pad_top, g.pad_left), (2, 2));
    }

    #[test]
    fn odd_padding_goes_bottom_right() {
        // stride 2 on even input with 3x3 kernel: total pad 1, top 0 bottom 1.
        let g = ConvGeom::same(8, 8, 3, 3, 2, 1);
        assert_eq!((g.out_h, g.out_w), (4, 4));
        assert_eq!((g.pad_top, g.pad_left), (0, 0));
    }
}
