mod common;

use common::{assert_close, rng, uniform};
use proptest::prelude::*;
use summit_core::kernels::conv::{conv2d_forward, ConvSpec};
use summit_core::kernels::pool::{global_avg_forward, local_avg_forward};
use summit_core::kernels::shuffle::{pixel_shuffle, pixel_unshuffle};
use summit_core::kernels::softmax::softmax_forward;
use summit_core::{Error, Tape, Tensor};

#[test]
fn conv_center_of_ones() {
    let x = Tensor::<f64>::ones(vec![1, 1, 3, 3]);
    let w = Tensor::<f64>::ones(vec![1, 1, 3, 3]);
    let y = conv2d_forward(&x, &w, None, ConvSpec::new(1, 1, 1)).unwrap();
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    assert_eq!(y.data()[4], 9.0);
}

#[test]
fn conv_unit_kernel_is_identity() {
    let x: Tensor<f64> = uniform(&[2, 1, 5, 4], -1.0, 1.0, &mut rng(1));
    let w = Tensor::ones(vec![1, 1, 1, 1]);
    let b = Tensor::zeros(vec![1]);
    assert_eq!(conv2d_forward(&x, &w, Some(&b), ConvSpec::default()).unwrap(), x);
}

#[test]
fn grouped_conv_matches_block_diagonal_dense() {
    let mut r = rng(2);
    let x: Tensor<f64> = uniform(&[2, 4, 8, 8], -1.0, 1.0, &mut r);
    let wg: Tensor<f64> = uniform(&[4, 1, 3, 3], -1.0, 1.0, &mut r);
    let mut dense = vec![0.0; 4 * 4 * 9];
    for o in 0..4 {
        for k in 0..9 {
            dense[(o * 4 + o) * 9 + k] = wg.data()[o * 9 + k];
        }
    }
    let wd = Tensor::new(vec![4, 4, 3, 3], dense).unwrap();
    let a = conv2d_forward(&x, &wg, None, ConvSpec::new(1, 1, 4)).unwrap();
    let b = conv2d_forward(&x, &wd, None, ConvSpec::new(1, 1, 1)).unwrap();
    assert_close(a.data(), b.data(), 1e-12);
}

#[test]
fn conv_shape_errors_name_axes() {
    let x = Tensor::<f32>::zeros(vec![1, 3, 4, 4]);
    let w = Tensor::<f32>::zeros(vec![2, 2, 3, 3]);
    match conv2d_forward(&x, &w, None, ConvSpec::new(1, 1, 1)) {
        Err(Error::Dimension { axis, .. }) => assert!(axis.contains("channels"), "{axis}"),
        other => panic!("expected a dimension error, got {other:?}"),
    }
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::<f64>::new();
    let g = tape.constant(Tensor::ones(vec![2]));
    let o = tape.constant(Tensor::zeros(vec![2]));
    let x = tape.constant(Tensor::new(vec![1, 2, 1, 1], vec![1.0, 3.0]).unwrap());
    let y = tape.layer_norm_channel(x, g, o, 1e-12).unwrap();
    assert_close(tape.value(y).data(), &[-1.0, 1.0], 1e-9);

    let c = tape.constant(Tensor::full(vec![1, 2, 3, 3], 0.7));
    let y = tape.layer_norm_channel(c, g, o, 1e-6).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let bad = tape.constant(Tensor::ones(vec![3]));
    assert!(matches!(tape.layer_norm_channel(x, bad, o, 1e-6), Err(Error::Dimension { .. })));
}

#[test]
fn layer_norm_centers_every_pixel() {
    let mut tape = Tape::<f64>::new();
    let (c, h, w) = (8, 5, 6);
    let x = tape.constant(uniform(&[2, c, h, w], -3.0, 5.0, &mut rng(3)));
    let g = tape.constant(Tensor::ones(vec![c]));
    let o = tape.constant(Tensor::zeros(vec![c]));
    let y = tape.layer_norm_channel(x, g, o, 1e-6).unwrap();
    let d = tape.value(y).data();
    for b in 0..2 {
        for p in 0..h * w {
            let mean: f64 = (0..c).map(|ch| d[(b * c + ch) * h * w + p]).sum::<f64>() / c as f64;
            assert!(mean.abs() < 1e-6);
        }
    }
}

#[test]
fn softmax_and_pool_examples() {
    let s = softmax_forward(&Tensor::<f64>::zeros(vec![3])).unwrap();
    assert_close(s.data(), &[1.0 / 3.0; 3], 1e-15);
    let poisoned = softmax_forward(&Tensor::new(vec![2, 2], vec![0.0, f64::NAN, 1.0, 1.0]).unwrap()).unwrap();
    assert!(poisoned.data()[..2].iter().all(|v| v.is_nan()));
    assert_eq!(&poisoned.data()[2..], &[0.5, 0.5]);

    let c = Tensor::<f64>::full(vec![1, 2, 4, 5], 2.5);
    assert!(global_avg_forward(&c).unwrap().data().iter().all(|&v| v == 2.5));
}

#[test]
fn local_pool_with_large_window_is_global() {
    let x: Tensor<f64> = uniform(&[2, 3, 6, 9], 0.0, 1.0, &mut rng(4));
    let g = global_avg_forward(&x).unwrap();
    for window in [9, 16] {
        let l = local_avg_forward(&x, window).unwrap();
        for (p, plane) in l.data().chunks(54).enumerate() {
            for &v in plane {
                assert!((v - g.data()[p]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn backward_examples() {
    let mut tape = Tape::<f64>::new();
    let xv = uniform::<f64>(&[2, 3], -1.0, 1.0, &mut rng(5));
    let x = tape.leaf(xv.clone());
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));

    let sq = tape.mul(x, x).unwrap();
    let s2 = tape.sum(sq);
    let g = tape.backward(s2).unwrap();
    assert_close(g.get(x).unwrap().data(), &xv.map(|v| 2.0 * v).to_vec(), 1e-15);
}

#[test]
fn backward_rejects_detached_and_non_scalar() {
    let mut tape = Tape::<f64>::new();
    let c = tape.constant(Tensor::ones(vec![2]));
    let s = tape.sum(c);
    assert!(matches!(tape.backward(s), Err(Error::Usage(_))));
    let x = tape.leaf(Tensor::ones(vec![2]));
    assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
}

#[test]
fn fan_out_accumulates() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::full(vec![3], 2.0));
    let a = tape.add(x, x).unwrap();
    let b = tape.mul(a, x).unwrap(); // 2x^2
    let s = tape.sum(b);
    let g = tape.backward(s).unwrap();
    assert_close(g.get(x).unwrap().data(), &[8.0; 3], 1e-15);
}

#[test]
fn broadcast_mismatch_is_dimension_error() {
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::ones(vec![2, 3]));
    let b = tape.constant(Tensor::ones(vec![2, 4]));
    assert!(matches!(tape.add(a, b), Err(Error::Dimension { .. })));
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        cols in 1usize..9,
        seed in any::<u64>(),
        scale in 0.1f64..50.0,
    ) {
        let x: Tensor<f64> = uniform(&[rows, cols], -scale, scale, &mut rng(seed));
        let y = softmax_forward(&x).unwrap();
        for row in y.data().chunks(cols) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn pixel_shuffle_round_trips(b in 1usize..3, c in 1usize..4, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let x: Tensor<f32> = uniform(&[b, 4 * c, h, w], -1.0, 1.0, &mut rng(seed));
        let y = pixel_shuffle(&x, 2).unwrap();
        prop_assert_eq!(y.shape(), &[b, c, 2 * h, 2 * w][..]);
        let mut before = x.to_vec();
        let mut after = y.to_vec();
        before.sort_by(f32::total_cmp);
        after.sort_by(f32::total_cmp);
        prop_assert_eq!(before, after);
        prop_assert_eq!(pixel_unshuffle(&y, 2).unwrap(), x);
    }

    #[test]
    fn depthwise_equals_block_diagonal(c in 1usize..5, k in prop::sample::select(vec![1usize, 3]), seed in any::<u64>()) {
        let mut r = rng(seed);
        let x: Tensor<f64> = uniform(&[1, c, 6, 5], -1.0, 1.0, &mut r);
        let wg: Tensor<f64> = uniform(&[c, 1, k, k], -1.0, 1.0, &mut r);
        let mut dense = vec![0.0; c * c * k * k];
        for o in 0..c {
            for t in 0..k * k {
                dense[(o * c + o) * k * k + t] = wg.data()[o * k * k + t];
            }
        }
        let wd = Tensor::new(vec![c, c, k, k], dense).unwrap();
        let pad = k / 2;
        let a = conv2d_forward(&x, &wg, None, ConvSpec::new(1, pad, c)).unwrap();
        let b = conv2d_forward(&x, &wd, None, ConvSpec::new(1, pad, 1)).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }
}
