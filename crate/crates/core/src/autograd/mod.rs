//! Minimal reverse-mode differentiation over the handful of tensor operations
//! the segmentation, injection and prediction networks need.

mod graph;
mod kernels;
mod param;
mod tensor;

pub use graph::{Activation, BatchStats, Graph, NormMode, Var, BCE_CLAMP, LEAKY_SLOPE, NORM_EPS};
pub use param::{Adam, Binding, Param, ParamKind, ParamStore};
pub use tensor::{Real, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut g = Graph::<f32>::new();
        let x = Tensor::from_fn(vec![1, 1, 5, 4], |i| i as f32 * 0.25 - 1.0);
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let xi = g.constant(x.clone());
        let wi = g.constant(Tensor::new(vec![1, 1, 3, 3], w).unwrap());
        let bi = g.constant(Tensor::zeros(vec![1]));
        let y = g.conv2d(xi, wi, bi).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(vec![1, 2, 4, 4]));
        let w = g.constant(Tensor::zeros(vec![3, 1, 3, 3]));
        let b = g.constant(Tensor::zeros(vec![3]));
        assert!(matches!(g.conv2d(x, w, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn non_finite_output_is_numerical_error() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::full(vec![1, 1, 2, 2], 1e30));
        let w = g.constant(Tensor::full(vec![1, 1, 3, 3], 1e30));
        let b = g.constant(Tensor::zeros(vec![1]));
        assert!(matches!(g.conv2d(x, w, b), Err(Error::Numerical(_))));
    }

    #[test]
    fn zero_input_transpose_gives_bias() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![1, 2, 3, 3]));
        let w = g.constant(Tensor::from_fn(vec![2, 4, 3, 3], |i| i as f64 * 0.01));
        let b = g.constant(t(&[4], &[0.5, -1.0, 2.0, 0.0]));
        let y = g.conv_transpose2d(x, w, b).unwrap();
        assert_eq!(g.shape(y), &[1, 4, 6, 6]);
        for (i, v) in g.value(y).data().iter().enumerate() {
            assert_eq!(*v, [0.5, -1.0, 2.0, 0.0][i / 36]);
        }
    }

    #[test]
    fn maxpool_odd_size_is_dimension_error() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(vec![1, 1, 3, 4]));
        assert!(matches!(g.maxpool2d(x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn maxpool_ties_route_to_first_element() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(vec![1, 1, 2, 2], 3.0), true);
        let y = g.maxpool2d(x).unwrap();
        assert_eq!(g.value(y).data(), &[3.0]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn upsample_single_pixel() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::full(vec![1, 1, 1, 1], 7.0));
        let y = g.upsample_nearest(x).unwrap();
        assert_eq!(g.value(y).data(), &[7.0; 4]);
    }

    #[test]
    fn constant_plane_normalizes_to_zero() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::full(vec![1, 2, 3, 3], 4.0));
        let gamma = g.constant(Tensor::full(vec![2], 1.0));
        let beta = g.constant(Tensor::zeros(vec![2]));
        let (y, _) = g.normalize(x, NormMode::Instance, gamma, beta).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        // Single pixel plane is allowed too.
        let x1 = g.constant(Tensor::full(vec![1, 2, 1, 1], 4.0));
        let (y1, _) = g.normalize(x1, NormMode::Instance, gamma, beta).unwrap();
        assert!(g.value(y1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_applied_after_standardizing() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[-1.0, 1.0, -1.0, 1.0]));
        let gamma = g.constant(t(&[1], &[2.0]));
        let beta = g.constant(t(&[1], &[1.0]));
        let (y, _) = g.normalize(x, NormMode::Instance, gamma, beta).unwrap();
        let v = g.value(y).data();
        let mean = v.iter().sum::<f64>() / 4.0;
        let std = (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!((mean - 1.0).abs() < 1e-9);
        assert!((std - 2.0).abs() < 1e-4);
    }

    #[test]
    fn activation_pointwise_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3], &[-1.0, 0.0, 50.0]));
        let lr = g.activation(x, Activation::LeakyRelu).unwrap();
        assert_eq!(g.value(lr).data(), &[-0.01, 0.0, 50.0]);
        let th = g.activation(x, Activation::Tanh).unwrap();
        assert_eq!(g.value(th).data()[1], 0.0);
        assert!(g.value(th).data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let sg = g.activation(x, Activation::Sigmoid).unwrap();
        assert_eq!(g.value(sg).data()[1], 0.5);
    }

    #[test]
    fn dense_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 3], &[1.0, -2.0, 3.0]));
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        let w = g.constant(t(&[3, 3], &eye));
        let b = g.constant(Tensor::zeros(vec![3]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn concat_with_empty_channels_is_identity() {
        let mut g = Graph::<f32>::new();
        let a = Tensor::from_fn(vec![2, 3, 2, 2], |i| i as f32);
        let av = g.constant(a.clone());
        let e = g.constant(Tensor::zeros(vec![2, 0, 2, 2]));
        let y = g.concat_channels(av, e).unwrap();
        assert_eq!(g.value(y), &a);
        let bad = g.constant(Tensor::zeros(vec![2, 1, 3, 2]));
        assert!(g.concat_channels(av, bad).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_fn(vec![2, 3], |i| i as f64), true);
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn double_backward_is_usage_error() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(vec![2], 1.0), true);
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Usage(_))));
        g.reset_grads();
        g.backward(s).unwrap();
    }

    #[test]
    fn untracked_leaf_gets_no_grad_and_unreached_leaf_gets_zeros() {
        let mut g = Graph::<f64>::new();
        let frozen = g.leaf(Tensor::full(vec![2], 1.0), false);
        let free = g.leaf(Tensor::full(vec![2], 1.0), true);
        let unused = g.leaf(Tensor::full(vec![3], 1.0), true);
        let p = g.mul(frozen, free).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(frozen).is_none());
        assert_eq!(g.grad(free).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(g.grad(unused).unwrap().data(), &[0.0; 3]);
    }
}
