mod support;

use ctan_core::ops::{self, Conv3dGeometry};
use ctan_core::rng::rng_from_seed;
use ctan_core::Tensor;
use proptest::prelude::*;
use rand::Rng;
use support::{max_abs_diff, seeded};

#[test]
fn conv3d_matches_seven_loop_oracle() {
    for seed in 0..60u64 {
        let mut rng = rng_from_seed(seed);
        let stride = [rng.random_range(1..3), rng.random_range(1..3), rng.random_range(1..3)];
        let pad = [rng.random_range(0..2), rng.random_range(0..2), rng.random_range(0..3)];
        let kernel = [rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4)];
        let ci = rng.random_range(1..4);
        let co = rng.random_range(1..4);
        let dims: Vec<usize> = (0..3).map(|a| kernel[a] + rng.random_range(0..5)).collect();
        let x = seeded(&[2, dims[0], ci, dims[1], dims[2]], seed + 100);
        let k = seeded(&[co, ci, kernel[0], kernel[1], kernel[2]], seed + 200);
        let b = seeded(&[co], seed + 300);
        let got = ops::conv3d(&x, &k, Some(&b), &Conv3dGeometry::new(stride, pad)).unwrap();
        let want = support::conv3d(&x, &k, Some(&b), stride, pad);
        assert_eq!(got.shape(), want.shape(), "seed {seed}");
        assert!(max_abs_diff(got.data(), want.data()) < 1e-12, "seed {seed}");
    }
}

#[test]
fn conv3d_identity_kernel_and_f32_agreement() {
    let x = seeded(&[1, 3, 2, 4, 4], 1);
    let mut k = Tensor::zeros(&[2, 2, 1, 1, 1]);
    k.data_mut()[0] = 1.0;
    k.data_mut()[3] = 1.0;
    let out = ops::conv3d(&x, &k, None, &Conv3dGeometry::new([1, 1, 1], [0, 0, 0])).unwrap();
    assert_eq!(out.data(), x.data());

    let k = seeded(&[4, 2, 3, 3, 3], 2);
    let geo = Conv3dGeometry::new([1, 2, 2], [1, 1, 1]);
    let hi = ops::conv3d(&x, &k, None, &geo).unwrap();
    let lo = ops::conv3d(&x.cast::<f32>(), &k.cast::<f32>(), None, &geo).unwrap();
    let lo: Tensor<f64> = lo.cast();
    assert!(max_abs_diff(hi.data(), lo.data()) < 1e-5);
}

#[test]
fn linear_matches_matrix_product() {
    let w = seeded(&[3, 4], 1);
    let b = seeded(&[3], 2);
    let x = seeded(&[2, 5, 4], 3);
    let y = ops::linear(&w, Some(&b), &x).unwrap();
    assert_eq!(y.shape(), &[2, 5, 3]);
    for row in 0..10 {
        for o in 0..3 {
            let mut acc = b.data()[o];
            for i in 0..4 {
                acc += w.data()[o * 4 + i] * x.data()[row * 4 + i];
            }
            assert!((y.data()[row * 3 + o] - acc).abs() < 1e-12);
        }
    }
    assert!(ops::linear(&w, None, &seeded(&[2, 3], 4)).is_err());
}

#[test]
fn broadcast_mul_and_pool_match_loops() {
    let a = seeded(&[2, 1, 3, 1, 1], 5);
    let x = seeded(&[2, 4, 3, 2, 2], 6);
    let y = ops::broadcast_mul(&a, &x).unwrap();
    let pooled = ops::avg_pool_axes(&x, &[1, 3, 4]).unwrap();
    assert_eq!(pooled.shape(), &[2, 1, 3, 1, 1]);
    for n in 0..2 {
        for c in 0..3 {
            let mut sum = 0.0;
            for t in 0..4 {
                for hw in 0..4 {
                    let i = ((n * 4 + t) * 3 + c) * 4 + hw;
                    assert!((y.data()[i] - a.data()[n * 3 + c] * x.data()[i]).abs() < 1e-15);
                    sum += x.data()[i];
                }
            }
            assert!((pooled.data()[n * 3 + c] - sum / 16.0).abs() < 1e-12);
        }
    }
    assert!(ops::broadcast_mul(&seeded(&[2, 2, 3, 1, 1], 7), &x).is_err());
}

#[test]
fn softmax_cross_entropy_by_hand() {
    let logits: Tensor<f64> = Tensor::from_f64(&[2, 3], &[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
    let (loss, probs) = ops::softmax_cross_entropy(&logits, &[2, 0]).unwrap();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    let want = ((z.ln() - 3.0) + 3f64.ln()) / 2.0;
    assert!((loss - want).abs() < 1e-12);
    assert!((probs[5] - 1.0 / 3.0).abs() < 1e-12);
    assert!(ops::softmax_cross_entropy(&logits, &[3, 0]).is_err());
}

proptest! {
    #[test]
    fn sigmoid_stays_in_unit_interval(z in -30.0f64..30.0) {
        let s = ops::sigmoid_scalar(z);
        prop_assert!(s > 0.0 && s < 1.0);
        prop_assert!((s + ops::sigmoid_scalar(-z) - 1.0).abs() < 1e-12);
    }
}
