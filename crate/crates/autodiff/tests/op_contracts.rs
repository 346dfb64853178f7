//! Contract tests for the tape operations: hand-derived values, finite
//! difference oracles, and determinism.

use nasdet_autodiff::check::assert_grads_match;
use nasdet_autodiff::tensor::{Shape, Tensor};
use nasdet_autodiff::{Tape, ValueId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn conv_identity_kernel_passes_input_through() {
    let mut tape = Tape::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, Shape::new(1, 1, 4, 4));
    let xv = tape.input(x.clone());
    let k = tape.input(Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![1.0]).unwrap());
    let y = tape.conv2d(xv, k, 1, 1).unwrap();
    assert_eq!(tape.value(y).data(), x.data());
}

#[test]
fn conv_same_padding_shape_contract() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::zeros(Shape::new(1, 8, 16, 16)));
    let k = tape.input(Tensor::zeros(Shape::new(8, 8, 3, 3)));
    let y = tape.conv2d(x, k, 1, 1).unwrap();
    assert_eq!(tape.shape(y), Shape::new(1, 8, 16, 16));
}

#[test]
fn conv_rejects_channel_mismatch_and_zero_spatial() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::zeros(Shape::new(1, 3, 4, 4)));
    let k = tape.input(Tensor::zeros(Shape::new(2, 4, 3, 3)));
    assert!(tape.conv2d(x, k, 1, 1).is_err());
    let z = tape.input(Tensor::zeros(Shape::new(1, 1, 0, 4)));
    let k1 = tape.input(Tensor::zeros(Shape::new(1, 1, 1, 1)));
    assert!(tape.conv2d(z, k1, 1, 1).is_err());
}

#[test]
fn conv_dilated_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, Shape::new(1, 2, 5, 5));
    let k = rand_tensor(&mut rng, Shape::new(2, 2, 3, 3));
    assert_grads_match(&[x, k], |tape, ids| {
        let y = tape.conv2d(ids[0], ids[1], 1, 2)?;
        tape.sum(y)
    });
}

#[test]
fn conv_is_linear_in_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, Shape::new(1, 2, 6, 6));
    let y = rand_tensor(&mut rng, Shape::new(1, 2, 6, 6));
    let k = rand_tensor(&mut rng, Shape::new(3, 2, 3, 3));
    let (a, b) = (0.7, -1.3);

    let run = |input: Tensor<f64>| -> Tensor<f64> {
        let mut tape = Tape::<f64>::new();
        let xv = tape.input(input);
        let kv = tape.input(k.clone());
        let out = tape.conv2d(xv, kv, 1, 1).unwrap();
        tape.value(out).clone()
    };

    let mut combo = Tensor::zeros(x.shape());
    for ((c, &xv), &yv) in combo.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
        *c = a * xv + b * yv;
    }
    let lhs = run(combo);
    let (fx, fy) = (run(x), run(y));
    for ((l, &vx), &vy) in lhs.data().iter().zip(fx.data()).zip(fy.data()) {
        assert!((l - (a * vx + b * vy)).abs() < 1e-10);
    }
}

#[test]
fn upsample_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, Shape::new(1, 2, 3, 4));
    assert_grads_match(&[x], |tape, ids| {
        let y = tape.upsample2x(ids[0])?;
        tape.sum(y)
    });
}

#[test]
fn softmax_t_symmetry_and_closed_form() {
    let mut tape = Tape::<f64>::new();
    let c = tape.input(Tensor::from_slice_vec(&[0.37, 0.37, 0.37]));
    let y = tape.softmax_t(c, 2.5).unwrap();
    for &v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }

    let v = tape.input(Tensor::from_slice_vec(&[2.0, 1.0]));
    let y = tape.softmax_t(v, 1.0).unwrap();
    let e = std::f64::consts::E;
    let expect = [e / (e + 1.0), 1.0 / (e + 1.0)];
    for (a, b) in tape.value(y).data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-12);
    }

    // tau -> 0+ sharpens towards the argmax.
    let y = tape.softmax_t(v, 0.05).unwrap();
    assert!(tape.value(y).data()[0] > 0.999);
}

#[test]
fn softmax_t_sums_to_one_and_is_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let logits: Vec<f64> = (0..6).map(|_| rng.random_range(-4.0..4.0)).collect();
        let shifted: Vec<f64> = logits.iter().map(|v| v + 13.5).collect();
        let mut tape = Tape::<f64>::new();
        let a = tape.input(Tensor::from_slice_vec(&logits));
        let b = tape.input(Tensor::from_slice_vec(&shifted));
        let ya = tape.softmax_t(a, 0.7).unwrap();
        let yb = tape.softmax_t(b, 0.7).unwrap();
        let sum: f64 = tape.value(ya).data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(tape.value(ya).data().iter().all(|&p| p > 0.0));
        for (p, q) in tape.value(ya).data().iter().zip(tape.value(yb).data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_rejects_nonpositive_temperature() {
    let mut tape = Tape::<f64>::new();
    let v = tape.input(Tensor::from_slice_vec(&[1.0, 2.0]));
    assert!(tape.softmax_t(v, 0.0).is_err());
    assert!(tape.softmax_t(v, -1.0).is_err());
}

#[test]
fn softmax_t_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, Shape::vec(5));
    // Mix distinct constants by the softmax output so the gradient is not the
    // trivial zero of sum(softmax).
    let coeffs: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
    assert_grads_match(&[x], |tape, ids| {
        let y = tape.softmax_t(ids[0], 0.8)?;
        let consts: Vec<ValueId> = coeffs.iter().map(|&c| tape.input(Tensor::scalar(c))).collect();
        tape.weighted_sum(&consts, y)
    });
}

#[test]
fn sum_gradient_is_all_ones_and_unused_param_gets_none() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::full(Shape::new(1, 2, 3, 3), 0.5));
    let unused = tape.param(Tensor::full(Shape::vec(4), 1.0));
    let loss = tape.sum(x).unwrap();
    tape.backward(loss).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));
    assert!(tape.grad(unused).is_none());
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::full(Shape::vec(3), 1.0));
    assert!(tape.backward(x).is_err());
}

#[test]
fn composite_graph_gradients_match_finite_differences() {
    // conv -> relu -> upsample -> maxpool -> sum, checked against FD.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, Shape::new(1, 2, 4, 4));
    let k = rand_tensor(&mut rng, Shape::new(2, 2, 3, 3));
    assert_grads_match(&[x, k], |tape, ids| {
        let c = tape.conv2d(ids[0], ids[1], 1, 1)?;
        let r = tape.relu(c)?;
        let u = tape.upsample2x(r)?;
        let p = tape.maxpool2(u)?;
        tape.sum(p)
    });
}

#[test]
fn group_norm_weighted_sum_bias_gradients_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&mut rng, Shape::new(2, 4, 3, 3));
    let gamma = rand_tensor(&mut rng, Shape::vec(4));
    let beta = rand_tensor(&mut rng, Shape::vec(4));
    let bias = rand_tensor(&mut rng, Shape::vec(4));
    let other = rand_tensor(&mut rng, Shape::new(2, 4, 3, 3));
    let weights = rand_tensor(&mut rng, Shape::vec(2));
    assert_grads_match(&[x, gamma, beta, bias, other, weights], |tape, ids| {
        let gn = tape.group_norm(ids[0], ids[1], ids[2], 2, 1e-5)?;
        let wb = tape.bias_add(gn, ids[3])?;
        let mix = tape.weighted_sum(&[wb, ids[4]], ids[5])?;
        tape.sum(mix)
    });
}

#[test]
fn scale_and_index_gradients_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, Shape::new(1, 2, 3, 3));
    let v = rand_tensor(&mut rng, Shape::vec(3));
    assert_grads_match(&[x, v], |tape, ids| {
        let s = tape.index_vec(ids[1], 1)?;
        let scaled = tape.scale_by_scalar(ids[0], s)?;
        tape.sum(scaled)
    });
}

#[test]
fn focal_and_smooth_l1_gradients_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cls = rand_tensor(&mut rng, Shape::new(2, 1, 3, 3));
    let reg = rand_tensor(&mut rng, Shape::new(2, 4, 3, 3));
    let targets: Vec<u8> = (0..18).map(|_| rng.random_range(0..2u8)).collect();
    let pos: Vec<bool> = targets.iter().map(|&t| t != 0).collect();
    let box_targets: Vec<f64> = (0..72).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t2 = targets.clone();
    let p2 = pos.clone();
    let bt2 = box_targets.clone();
    assert_grads_match(&[cls, reg], move |tape, ids| {
        let f = tape.focal_loss(&[ids[0]], &t2, 0.25, 2.0, 0.125)?;
        let s = tape.smooth_l1_loss(&[ids[1]], &bt2, &p2, 1.0, 0.125)?;
        tape.add(f, s)
    });
}

#[test]
fn st_gumbel_combine_forward_is_hard_but_logits_receive_gradient() {
    // Forward value equals the selected branch exactly; the soft weights see
    // a nonzero gradient even though they do not affect the forward value.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let feat = rand_tensor(&mut rng, Shape::new(1, 2, 2, 2));
    let mut tape = Tape::<f64>::new();
    let logits = tape.param(Tensor::from_slice_vec(&[0.3, -0.7, 1.1]));
    let soft = tape.softmax_t(logits, 0.5).unwrap();
    let f = tape.input(feat.clone());
    let out = tape.st_gumbel_combine(f, soft, 2).unwrap();
    assert_eq!(tape.value(out).data(), feat.data());
    let loss = tape.sum(out).unwrap();
    tape.backward(loss).unwrap();
    let g = tape.grad(logits).unwrap();
    let norm: f64 = g.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm > 1e-8, "straight-through must leave gradient on the choice logits");
}

#[test]
fn forward_is_deterministic_bit_for_bit() {
    let run = || -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = rand_tensor(&mut rng, Shape::new(2, 3, 8, 8));
        let k = rand_tensor(&mut rng, Shape::new(4, 3, 3, 3));
        let mut tape = Tape::<f64>::new();
        let xv = tape.input(x);
        let kv = tape.input(k);
        let c = tape.conv2d(xv, kv, 2, 1).unwrap();
        let u = tape.upsample2x(c).unwrap();
        let p = tape.maxpool2(u).unwrap();
        tape.value(p).data().iter().map(|v| v.to_bits()).collect()
    };
    assert_eq!(run(), run());
}

#[test]
fn nan_input_is_rejected_at_forward() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::full(Shape::new(1, 1, 2, 2), 1.0f64));
    let k = tape.input(Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![f64::NAN]).unwrap());
    assert!(tape.conv2d(x, k, 1, 1).is_err());
}

#[allow(dead_code)]
fn type_check_generic_instantiation(_: Tape<f32>, _: ValueId) {}
