mod common;

use common::*;
use errornet::autograd::{Activation, Graph, NormMode, Tensor};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn conv2d_matches_direct_oracle() {
    let mut r = rng(3);
    let x = random_tensor(&mut r, &[1, 2, 5, 5], 1.0);
    let w = random_tensor(&mut r, &[3, 2, 3, 3], 1.0);
    let b = random_tensor(&mut r, &[3], 1.0);
    let mut g = Graph::<f64>::new();
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = g.conv2d(xv, wv, bv).unwrap();
    assert!(max_abs_diff(g.value(y), &conv_oracle(&x, &w, &b)) < 1e-6);
}

#[test]
fn conv_transpose_matches_scatter_oracle() {
    let mut r = rng(4);
    let x = random_tensor(&mut r, &[1, 1, 3, 3], 1.0);
    let w = random_tensor(&mut r, &[1, 2, 3, 3], 1.0);
    let b = random_tensor(&mut r, &[2], 1.0);
    let mut g = Graph::<f64>::new();
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = g.conv_transpose2d(xv, wv, bv).unwrap();
    assert_eq!(g.shape(y), &[1, 2, 6, 6]);
    assert!(max_abs_diff(g.value(y), &convt_oracle(&x, &w, &b)) < 1e-6);
}

#[test]
fn maxpool_matches_window_scan() {
    let mut r = rng(5);
    let x = random_tensor(&mut r, &[1, 1, 4, 4], 1.0);
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x.clone());
    let y = g.maxpool2d(xv).unwrap();
    assert_eq!(g.value(y), &window_max_oracle(&x));
}

#[test]
fn upsample_quadruples_sum() {
    let mut r = rng(6);
    let x = random_tensor(&mut r, &[2, 3, 4, 5], 1.0);
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x.clone());
    let y = g.upsample_nearest(xv).unwrap();
    assert_eq!(g.shape(y), &[2, 3, 8, 10]);
    assert!((g.value(y).sum() - 4.0 * x.sum()).abs() < 1e-9);
}

#[test]
fn instance_norm_moments() {
    let mut r = rng(7);
    let x = random_tensor(&mut r, &[2, 3, 4, 4], 3.0).map(|v| v + 2.0);
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x);
    let gamma = g.constant(Tensor::full(vec![3], 1.0));
    let beta = g.constant(Tensor::zeros(vec![3]));
    let (y, _) = g.normalize(xv, NormMode::Instance, gamma, beta).unwrap();
    for plane in g.value(y).data().chunks(16) {
        let m = plane.iter().sum::<f64>() / 16.0;
        let v = plane.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 16.0;
        assert!(m.abs() < 1e-5);
        assert!((v - 1.0).abs() < 1e-3);
    }
}

#[test]
fn batch_norm_eval_uses_running_stats_verbatim() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(vec![1, 2, 1, 2], vec![1.0, 3.0, 5.0, 9.0]).unwrap());
    let gamma = g.constant(Tensor::full(vec![2], 1.0));
    let beta = g.constant(Tensor::zeros(vec![2]));
    let mean = [1.0, 5.0];
    let var = [4.0 - 1e-5, 16.0 - 1e-5];
    let (y, stats) = g
        .normalize(x, NormMode::BatchEval { mean: &mean, var: &var }, gamma, beta)
        .unwrap();
    assert!(stats.is_none());
    let out = g.value(y).data();
    for (a, b) in out.iter().zip([0.0, 1.0, 0.0, 1.0]) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn dense_matches_matmul_oracle() {
    let mut r = rng(8);
    let x = random_tensor(&mut r, &[2, 3], 1.0);
    let w = random_tensor(&mut r, &[3, 4], 1.0);
    let mut g = Graph::<f64>::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
    let bv = g.constant(Tensor::zeros(vec![4]));
    let y = g.dense(xv, wv, bv).unwrap();
    assert!(max_abs_diff(g.value(y), &matmul_oracle(&x, &w)) < 1e-6);
}

#[test]
fn concat_then_slice_recovers_parts() {
    let mut r = rng(9);
    let a = random_tensor(&mut r, &[2, 2, 3, 3], 1.0);
    let b = random_tensor(&mut r, &[2, 3, 3, 3], 1.0);
    let mut g = Graph::<f64>::new();
    let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.concat_channels(av, bv).unwrap();
    assert_eq!(&g.value(c).channels(2, 3).unwrap(), &b);
    assert_eq!(&g.value(c).channels(0, 2).unwrap(), &a);
}

#[test]
fn sigmoid_gradient_matches_finite_differences() {
    let mut r = rng(10);
    let x = random_tensor(&mut r, &[4, 4], 4.0);
    let rep = gradcheck(&[x], 1, |g, v| g.activation(v[0], Activation::Sigmoid).unwrap());
    assert_eq!(rep.failures, 0, "worst {}", rep.worst_rel);
}

#[test]
fn gradient_check_catches_a_missing_path() {
    // x * const(x): the tape sees half of the true derivative.
    let mut r = rng(11);
    let x = random_tensor(&mut r, &[3, 3], 1.0);
    let rep = gradcheck(&[x], 2, |g, v| {
        let c = g.constant(g.value(v[0]).clone());
        g.mul(v[0], c).unwrap()
    });
    assert_eq!(rep.failures, 9);
    assert!(rep.worst_rel > 0.4, "{}", rep.worst_rel);
}

#[test]
fn every_op_passes_gradient_check() {
    for res in gradient_suite() {
        assert_eq!(res.failures, 0, "{}: worst rel err {}", res.op, res.worst_rel);
    }
}

#[test]
fn kernels_are_bitwise_deterministic() {
    let run = || {
        let mut r = rng(11);
        let x = Tensor::<f32>::from_fn(vec![2, 3, 8, 8], |_| r.random_range(-1.0..1.0));
        let w = Tensor::<f32>::from_fn(vec![4, 3, 3, 3], |_| r.random_range(-1.0..1.0));
        let mut g = Graph::<f32>::new();
        let xv = g.leaf(x, true);
        let wv = g.leaf(w, true);
        let bv = g.leaf(Tensor::zeros(vec![4]), true);
        let y = g.conv2d(xv, wv, bv).unwrap();
        let s = g.mean(y).unwrap();
        g.backward(s).unwrap();
        (
            g.value(y).clone(),
            g.grad(xv).unwrap().clone(),
            g.grad(wv).unwrap().clone(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn conv_is_linear_without_bias() {
    let mut r = rng(12);
    let x = random_tensor(&mut r, &[1, 2, 6, 6], 1.0);
    let y = random_tensor(&mut r, &[1, 2, 6, 6], 1.0);
    let w = random_tensor(&mut r, &[3, 2, 3, 3], 1.0);
    let zero = Tensor::<f64>::zeros(vec![3]);
    let (alpha, beta) = (0.7, -1.3);
    let conv = |t: &Tensor<f64>| conv_via_graph(t, &w, &zero);
    let combo = x.zip_map(&y, |a, b| alpha * a + beta * b).unwrap();
    let lhs = conv(&combo);
    let rhs = conv(&x).zip_map(&conv(&y), |a, b| alpha * a + beta * b).unwrap();
    assert!(max_abs_diff(&lhs, &rhs) < 1e-5);
}

fn conv_via_graph(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::<f64>::new();
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = g.conv2d(xv, wv, bv).unwrap();
    g.value(y).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_agrees_with_oracle_on_random_shapes(
        n in 1usize..3, cin in 1usize..4, cout in 1usize..4, h in 1usize..7, w in 1usize..7, seed in 0u64..1000
    ) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, &[n, cin, h, w], 1.0);
        let k = random_tensor(&mut r, &[cout, cin, 3, 3], 1.0);
        let b = random_tensor(&mut r, &[cout], 1.0);
        prop_assert!(max_abs_diff(&conv_via_graph(&x, &k, &b), &conv_oracle(&x, &k, &b)) < 1e-9);
    }

    #[test]
    fn tanh_and_sigmoid_stay_in_range(v in -1e3f32..1e3) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::full(vec![1], v));
        let t = g.activation(x, Activation::Tanh).unwrap();
        let s = g.activation(x, Activation::Sigmoid).unwrap();
        prop_assert!((-1.0..=1.0).contains(&g.value(t).item()));
        prop_assert!((0.0..=1.0).contains(&g.value(s).item()));
    }
}
