//! Forward-path oracles: hand-computed values, closed forms, and an
//! independent naive convolution reference.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcodec_tensor::{backward, ops, Tensor};

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| (rng.next_u32() >> 8) as f32 / 16_777_216.0 * 2.0 - 1.0)
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Direct quadruple-loop cross-correlation, independent of the im2col path.
fn naive_conv2d(
    x: &[f32],
    w: &[f32],
    b: &[f32],
    (n, cin, h, wd): (usize, usize, usize, usize),
    (cout, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> Vec<f32> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for img in 0..n {
        for co in 0..cout {
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for di in 0..kh {
                            for dj in 0..kw {
                                let ii = (oi * stride + di) as isize - pad as isize;
                                let jj = (oj * stride + dj) as isize - pad as isize;
                                if ii < 0 || jj < 0 || ii >= h as isize || jj >= wd as isize {
                                    continue;
                                }
                                acc += x[((img * cin + ci) * h + ii as usize) * wd + jj as usize]
                                    * w[((co * cin + ci) * kh + di) * kw + dj];
                            }
                        }
                    }
                    out[((img * cout + co) * oh + oi) * ow + oj] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_hand_cross_correlation() {
    // 3x3 input 1..9, 2x2 identity-diagonal kernel -> [[6,8],[12,14]].
    let x = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
    let w = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let b = Tensor::zeros(&[1]);
    let y = ops::conv2d(&x, &w, &b, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert_eq!(y.to_vec(), vec![6.0, 8.0, 12.0, 14.0]);
}

#[test]
fn conv2d_zero_input_gives_zero_output() {
    let x = Tensor::zeros(&[1, 1, 4, 4]);
    let w = rand_tensor(&[2, 1, 3, 3], 3);
    let b = Tensor::zeros(&[2]);
    let y = ops::conv2d(&x, &w, &b, 1, 1).unwrap();
    assert!(y.to_vec().iter().all(|&v| v == 0.0));
}

#[test]
fn conv2d_stride2_halves_spatial_extent() {
    let x = rand_tensor(&[1, 3, 112, 96], 5);
    let w = rand_tensor(&[64, 3, 3, 3], 6);
    let b = Tensor::zeros(&[64]);
    let y = ops::conv2d(&x, &w, &b, 2, 1).unwrap();
    assert_eq!(y.shape(), &[1, 64, 56, 48]);
}

#[test]
fn conv2d_channel_mismatch_names_both_shapes() {
    let x = rand_tensor(&[1, 3, 8, 8], 1);
    let w = rand_tensor(&[4, 2, 3, 3], 2);
    let b = Tensor::zeros(&[4]);
    let err = ops::conv2d(&x, &w, &b, 1, 1).unwrap_err().to_string();
    assert!(err.contains("[1, 3, 8, 8]"), "{err}");
    assert!(err.contains("[4, 2, 3, 3]"), "{err}");
}

#[test]
fn conv2d_matches_naive_reference() {
    for (seed, stride, pad) in [(11u64, 1usize, 0usize), (12, 1, 1), (13, 2, 1), (14, 3, 2)] {
        let (n, cin, h, wd, cout, k) = (2, 3, 9, 7, 4, 3);
        let x = rand_tensor(&[n, cin, h, wd], seed);
        let w = rand_tensor(&[cout, cin, k, k], seed + 100);
        let b = rand_tensor(&[cout], seed + 200);
        let y = ops::conv2d(&x, &w, &b, stride, pad).unwrap();
        let want = naive_conv2d(
            &x.to_vec(),
            &w.to_vec(),
            &b.to_vec(),
            (n, cin, h, wd),
            (cout, k, k),
            stride,
            pad,
        );
        let got = y.to_vec();
        assert_eq!(got.len(), want.len());
        for (g, w_) in got.iter().zip(&want) {
            assert!((g - w_).abs() < 1e-5, "got {g}, want {w_}");
        }
    }
}

#[test]
fn conv_transpose2d_tiles_ones_without_overlap() {
    let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0; 4]).unwrap();
    let w = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0; 4]).unwrap();
    let b = Tensor::zeros(&[1]);
    let y = ops::conv_transpose2d(&x, &w, &b, 2, 0, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 4, 4]);
    assert_eq!(y.to_vec(), vec![1.0; 16]);
}

#[test]
fn conv_transpose2d_doubles_spatial_extent() {
    let x = rand_tensor(&[1, 64, 14, 12], 21);
    let w = rand_tensor(&[64, 32, 3, 3], 22);
    let b = Tensor::zeros(&[32]);
    let y = ops::conv_transpose2d(&x, &w, &b, 2, 1, 1).unwrap();
    assert_eq!(y.shape(), &[1, 32, 28, 24]);
}

#[test]
fn conv_and_transpose_are_adjoint() {
    // <conv(x), y> == <x, conv_t(y)> with shared weight and zero bias.
    for seed in [31u64, 32, 33] {
        let (n, cin, cout, h, wd, k, s, p) = (1, 2, 3, 8, 6, 3, 2, 1);
        let x = rand_tensor(&[n, cin, h, wd], seed);
        let w = rand_tensor(&[cout, cin, k, k], seed + 7);
        let zb_out = Tensor::zeros(&[cout]);
        let zb_in = Tensor::zeros(&[cin]);
        let cx = ops::conv2d(&x, &w, &zb_out, s, p).unwrap();
        let y = rand_tensor(cx.shape(), seed + 13);
        // Weight layout [Cout, Cin, kH, kW] reads as a transposed-conv
        // weight [Cin', Cout', kH, kW] with Cin' = Cout.
        let oh = cx.shape()[2];
        let op = h + 2 * p - k - (oh - 1) * s;
        let ty = ops::conv_transpose2d(&y, &w, &zb_in, s, p, op).unwrap();
        assert_eq!(ty.shape(), x.shape());
        let lhs: f64 = cx
            .to_vec()
            .iter()
            .zip(y.to_vec())
            .map(|(&a, b)| a as f64 * b as f64)
            .sum();
        let rhs: f64 = x
            .to_vec()
            .iter()
            .zip(ty.to_vec())
            .map(|(&a, b)| a as f64 * b as f64)
            .sum();
        assert!((lhs - rhs).abs() < 1e-4, "seed {seed}: {lhs} vs {rhs}");
    }
}

#[test]
fn conv_transpose2d_rejects_bad_parameters() {
    let x = rand_tensor(&[1, 2, 3, 3], 41);
    let w = rand_tensor(&[2, 2, 3, 3], 42);
    let b = Tensor::zeros(&[2]);
    assert!(ops::conv_transpose2d(&x, &w, &b, 2, 1, 2).is_err());
    // (1-1)*1 - 2*3 + 3 = -3: nonpositive output extent.
    let tiny = rand_tensor(&[1, 2, 1, 1], 43);
    assert!(ops::conv_transpose2d(&tiny, &w, &b, 1, 3, 0).is_err());
}

#[test]
fn prelu_positive_and_negative_branches() {
    let x = Tensor::from_vec(&[1, 1], vec![2.0]).unwrap();
    let slope = Tensor::from_vec(&[1], vec![0.25]).unwrap();
    assert_eq!(ops::prelu(&x, &slope).unwrap().to_vec(), vec![2.0]);
    let x = Tensor::from_vec(&[1, 1], vec![-2.0]).unwrap();
    assert_eq!(ops::prelu(&x, &slope).unwrap().to_vec(), vec![-0.5]);
}

#[test]
fn prelu_slope_gradient_is_negative_input_sum() {
    // d out / d slope at x = -2 is -2.
    let x = Tensor::from_vec(&[1, 1], vec![-2.0]).unwrap();
    let slope = Tensor::parameter(&[1], vec![0.25]).unwrap();
    let y = ops::prelu(&x, &slope).unwrap();
    backward(&ops::sum_all(&y)).unwrap();
    assert_eq!(slope.grad().unwrap(), vec![-2.0]);
}

#[test]
fn dropout_rate_zero_and_inference_are_identity() {
    let x = rand_tensor(&[4, 25], 51);
    let y = ops::dropout(&x, 0.0, true, 9).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());
    let y = ops::dropout(&x, 0.5, false, 9).unwrap();
    assert_eq!(y.id(), x.id(), "inference dropout is a pass-through");
}

#[test]
fn dropout_statistics_at_half_rate() {
    let n = 100_000;
    let x = Tensor::from_vec(&[n], vec![1.0; n]).unwrap();
    let y = ops::dropout(&x, 0.5, true, 1234).unwrap();
    let data = y.to_vec();
    let survivors = data.iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
    assert!((survivors - 0.5).abs() < 0.01, "survivor fraction {survivors}");
    // Survivors are scaled by 2, so the mean stays near 1.
    let mean = data.iter().sum::<f32>() as f64 / n as f64;
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
}

#[test]
fn dropout_mask_is_pure_function_of_seed() {
    let x = rand_tensor(&[3, 64], 61);
    let a = ops::dropout(&x, 0.3, true, 77).unwrap();
    let b = ops::dropout(&x, 0.3, true, 77).unwrap();
    assert_eq!(a.to_vec(), b.to_vec());
    let c = ops::dropout(&x, 0.3, true, 78).unwrap();
    assert_ne!(a.to_vec(), c.to_vec());
}

#[test]
fn mse_closed_forms() {
    let t = rand_tensor(&[2, 3, 4], 71);
    let zero = ops::mse_loss(&t, &t).unwrap();
    assert_eq!(zero.item(), 0.0);

    let shifted =
        Tensor::from_vec(t.shape(), t.to_vec().iter().map(|v| v + 0.1).collect()).unwrap();
    let loss = ops::mse_loss(&shifted, &t).unwrap();
    assert!((loss.item() - 0.01).abs() < 1e-6, "loss {}", loss.item());
}

#[test]
fn mse_rejects_shape_mismatch() {
    let a = rand_tensor(&[2, 3], 81);
    let b = rand_tensor(&[3, 2], 82);
    assert!(ops::mse_loss(&a, &b).is_err());
}

#[test]
fn backward_of_sum_is_ones() {
    let x = Tensor::parameter(&[2, 3, 4], vec![0.5; 24]).unwrap();
    backward(&ops::sum_all(&x)).unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0; 24]);
}

#[test]
fn repeated_backward_accumulates_exactly() {
    let x = Tensor::parameter(&[5], vec![0.3; 5]).unwrap();
    let loss = ops::sum_all(&x);
    backward(&loss).unwrap();
    let first = x.grad().unwrap();
    backward(&loss).unwrap();
    let second = x.grad().unwrap();
    for (a, b) in first.iter().zip(&second) {
        assert_eq!(*b, 2.0 * *a);
    }
}

#[test]
fn backward_rejects_non_scalar() {
    let x = Tensor::parameter(&[2, 2], vec![1.0; 4]).unwrap();
    let y = ops::tanh(&x);
    assert!(backward(&y).is_err());
}

#[test]
fn fan_out_gradients_sum() {
    // loss = sum(x + x): dx = 2.
    let x = Tensor::parameter(&[3], vec![0.1, 0.2, 0.3]).unwrap();
    let y = ops::add(&x, &x).unwrap();
    backward(&ops::sum_all(&y)).unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0; 3]);
}

#[test]
fn forward_is_deterministic_across_runs() {
    let run = || {
        let x = rand_tensor(&[2, 3, 12, 12], 91);
        let w = rand_tensor(&[4, 3, 3, 3], 92);
        let b = rand_tensor(&[4], 93);
        let y = ops::conv2d(&x, &w, &b, 2, 1).unwrap();
        let z = ops::tanh(&y);
        z.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn gradients_are_deterministic_across_runs() {
    let run = || {
        let x = rand_tensor(&[1, 2, 8, 8], 94);
        let w = Tensor::parameter(&[3, 2, 3, 3], rand_tensor(&[3, 2, 3, 3], 95).to_vec()).unwrap();
        let b = Tensor::parameter(&[3], vec![0.0; 3]).unwrap();
        let y = ops::conv2d(&x, &w, &b, 1, 1).unwrap();
        let t = rand_tensor(y.shape(), 96);
        backward(&ops::mse_loss(&y, &t).unwrap()).unwrap();
        w.grad()
            .unwrap()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn quantize_roundtrip_snaps_to_grid_and_blocks_gradient() {
    let x = Tensor::parameter(&[3], vec![-1.0, 0.0, 1.0]).unwrap();
    let y = ops::quantize_roundtrip(&x);
    let v = y.to_vec();
    assert_eq!(v[0], -1.0);
    assert!((v[1] - (128.0f32 * 2.0 / 255.0 - 1.0)).abs() < 1e-7);
    assert_eq!(v[2], 1.0);
    // No gradient flows through the rounding.
    backward(&ops::sum_all(&y)).unwrap();
    assert!(x.grad().is_none());
}

#[test]
fn finite_outputs_on_finite_inputs() {
    let x = rand_tensor(&[2, 3, 16, 16], 101);
    let w = Tensor::parameter(&[4, 3, 3, 3], rand_tensor(&[4, 3, 3, 3], 102).to_vec()).unwrap();
    let b = Tensor::parameter(&[4], vec![0.1; 4]).unwrap();
    let s = Tensor::parameter(&[4], vec![0.25; 4]).unwrap();
    let y = ops::prelu(&ops::conv2d(&x, &w, &b, 2, 1).unwrap(), &s).unwrap();
    let z = ops::tanh(&y);
    let t = rand_tensor(z.shape(), 103);
    let loss = ops::mse_loss(&z, &t).unwrap();
    assert!(loss.all_finite() && z.all_finite());
    backward(&loss).unwrap();
    assert!(w.grad().unwrap().iter().all(|v| v.is_finite()));
    assert!(b.grad().unwrap().iter().all(|v| v.is_finite()));
    assert!(s.grad().unwrap().iter().all(|v| v.is_finite()));
}
