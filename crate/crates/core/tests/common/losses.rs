//! Scalar-loop loss oracles.

use errornet::autograd::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const PIXEL_CLAMP: f64 = 1e-7;

pub fn bce_oracle(s: &[f64], t: &[f64], fov: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for i in 0..s.len() {
        if fov[i] == 0.0 {
            continue;
        }
        let p = s[i].clamp(PIXEL_CLAMP, 1.0 - PIXEL_CLAMP);
        total -= t[i] * p.ln() + (1.0 - t[i]) * (1.0 - p).ln();
        count += 1.0;
    }
    total / count
}

pub fn mse_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..a.len() {
        total += (a[i] - b[i]) * (a[i] - b[i]);
    }
    total / a.len() as f64
}

pub fn kl_oracle(mu: &[f64], lv: &[f64], batch: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..mu.len() {
        total += 0.5 * (mu[i] * mu[i] + lv[i].exp() - 1.0 - lv[i]);
    }
    total / batch as f64
}

pub fn binary(r: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| r.random_bool(p) as u8 as f64)
}

pub fn probs(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(0.0..1.0))
}

/// `KL(q || N(0, I))` as the sample mean of `log q(z) - log p(z)`, `z ~ q`.
pub fn kl_monte_carlo(mu: &[f64], lv: &[f64], samples: usize, r: &mut ChaCha8Rng) -> f64 {
    let mut total = 0.0;
    for _ in 0..samples {
        for d in 0..mu.len() {
            let e: f64 = StandardNormal.sample(r);
            let sd = (0.5 * lv[d]).exp();
            let z = mu[d] + sd * e;
            // log q - log p; the 2π terms cancel.
            total += -0.5 * e * e - 0.5 * lv[d] + 0.5 * z * z;
        }
    }
    total / samples as f64
}
