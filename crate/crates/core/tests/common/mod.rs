//! Shared test oracles. Everything here is written directly from the
//! mathematical definitions and never calls into the kernels under test.
#![allow(dead_code)]

pub mod losses;
pub mod tables;

use errornet::autograd::{Activation, Graph, NormMode, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0) * scale)
}

/// Outcome of comparing analytic and central-difference gradients. An element
/// passes when its relative error is below 1e-3 or its absolute error below
/// 1e-6. `worst_rel` ignores gradients smaller than 1e-3.
pub struct GradReport {
    pub worst_rel: f64,
    pub failures: usize,
    pub checked: usize,
}

pub fn gradcheck(
    inputs: &[Tensor<f64>],
    weights_seed: u64,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
) -> GradReport {
    let h = 1e-6;
    // Random projection turns any output into a scalar with a generic gradient.
    let eval = |inputs: &[Tensor<f64>], want_grad: bool| -> (f64, Vec<Tensor<f64>>) {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), want_grad)).collect();
        let out = build(&mut g, &vars);
        let loss = if g.value(out).numel() == 1 {
            out
        } else {
            let mut r = rng(weights_seed);
            let proj = Tensor::from_fn(g.shape(out).to_vec(), |_| r.random_range(-1.0..1.0));
            let p = g.constant(proj);
            let m = g.mul(out, p).unwrap();
            g.sum(m).unwrap()
        };
        let value = g.value(loss).item();
        let grads = if want_grad {
            g.backward(loss).unwrap();
            vars.iter().map(|v| g.grad(*v).unwrap().clone()).collect()
        } else {
            Vec::new()
        };
        (value, grads)
    };
    let (_, analytic) = eval(inputs, true);
    let mut report = GradReport {
        worst_rel: 0.0,
        failures: 0,
        checked: 0,
    };
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * h);
            let a = analytic[k].data()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-300);
            report.checked += 1;
            if a.abs().max(numeric.abs()) >= 1e-3 {
                report.worst_rel = report.worst_rel.max(rel);
            }
            if abs >= 1e-6 && rel >= 1e-3 {
                report.failures += 1;
            }
        }
    }
    report
}

/// Direct zero-padded 3×3 convolution.
pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (n, cin, h, wd) = (s[0], s[1], s[2], s[3]);
    let cout = w.shape()[0];
    let mut out = Tensor::zeros(vec![n, cout, h, wd]);
    for bn in 0..n {
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for dy in 0..3 {
                            for dx in 0..3 {
                                let iy = y as isize + dy as isize - 1;
                                let ix = xx as isize + dx as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((bn * cin + ci) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((co * cin + ci) * 3 + dy) * 3 + dx];
                            }
                        }
                    }
                    out.data_mut()[((bn * cout + co) * h + y) * wd + xx] = acc;
                }
            }
        }
    }
    out
}

/// Stride-2 transposed convolution by scattering every input pixel's
/// weighted kernel into a padded canvas and cropping one pixel from the
/// top-left.
pub fn convt_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (n, cin, h, wd) = (s[0], s[1], s[2], s[3]);
    let cout = w.shape()[1];
    let (ch, cw) = (2 * h + 1, 2 * wd + 1);
    let mut out = Tensor::zeros(vec![n, cout, 2 * h, 2 * wd]);
    for bn in 0..n {
        for co in 0..cout {
            let mut canvas = vec![0.0; ch * cw];
            for ci in 0..cin {
                for iy in 0..h {
                    for ix in 0..wd {
                        let v = x.data()[((bn * cin + ci) * h + iy) * wd + ix];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                canvas[(2 * iy + ky) * cw + 2 * ix + kx] +=
                                    v * w.data()[((ci * cout + co) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                }
            }
            for oy in 0..2 * h {
                for ox in 0..2 * wd {
                    out.data_mut()[((bn * cout + co) * 2 * h + oy) * 2 * wd + ox] =
                        canvas[(oy + 1) * cw + ox + 1] + b.data()[co];
                }
            }
        }
    }
    out
}

pub fn matmul_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (n, d) = (a.shape()[0], a.shape()[1]);
    let k = b.shape()[1];
    let mut out = Tensor::zeros(vec![n, k]);
    for i in 0..n {
        for j in 0..k {
            let mut acc = 0.0;
            for l in 0..d {
                acc += a.data()[i * d + l] * b.data()[l * k + j];
            }
            out.data_mut()[i * k + j] = acc;
        }
    }
    out
}

pub fn window_max_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
    let mut out = Tensor::zeros(vec![s[0], s[1], h / 2, w / 2]);
    for p in 0..nc {
        for y in 0..h / 2 {
            for xx in 0..w / 2 {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        best = best.max(x.data()[(p * h + 2 * y + dy) * w + 2 * xx + dx]);
                    }
                }
                out.data_mut()[(p * (h / 2) + y) * (w / 2) + xx] = best;
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// One line of the gradient suite: op name, configurations run, failures.
pub struct OpGradResult {
    pub op: &'static str,
    pub configs: usize,
    pub failures: usize,
    pub worst_rel: f64,
}

/// Finite-difference check of every engine operation on five random
/// configurations each, in 64-bit mode.
pub fn gradient_suite() -> Vec<OpGradResult> {
    type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>;
    type Case = (Vec<Tensor<f64>>, Build);
    let mut results = Vec::new();
    let mut run = |op: &'static str, make: &dyn Fn(&mut ChaCha8Rng, usize) -> Case| {
        let mut failures = 0;
        let mut worst: f64 = 0.0;
        for cfg in 0..5 {
            let mut r = rng(1000 * op.len() as u64 + cfg as u64);
            let (inputs, build) = make(&mut r, cfg);
            let rep = gradcheck(&inputs, 77 + cfg as u64, |g, v| build(g, v));
            failures += rep.failures;
            worst = worst.max(rep.worst_rel);
        }
        results.push(OpGradResult {
            op,
            configs: 5,
            failures,
            worst_rel: worst,
        });
    };

    run("conv2d", &|r, cfg| {
        let (cin, cout, h, w) = (1 + cfg % 3, 1 + (cfg + 1) % 3, 3 + cfg % 2, 4);
        (
            vec![
                random_tensor(r, &[2, cin, h, w], 1.0),
                random_tensor(r, &[cout, cin, 3, 3], 0.5),
                random_tensor(r, &[cout], 0.5),
            ],
            Box::new(|g, v| g.conv2d(v[0], v[1], v[2]).unwrap()),
        )
    });
    run("conv_transpose2d", &|r, cfg| {
        let (cin, cout, h, w) = (1 + cfg % 2, 1 + (cfg + 1) % 3, 2 + cfg % 2, 3);
        (
            vec![
                random_tensor(r, &[1 + cfg % 2, cin, h, w], 1.0),
                random_tensor(r, &[cin, cout, 3, 3], 0.5),
                random_tensor(r, &[cout], 0.5),
            ],
            Box::new(|g, v| g.conv_transpose2d(v[0], v[1], v[2]).unwrap()),
        )
    });
    run("maxpool2d", &|r, cfg| {
        (
            vec![random_tensor(r, &[1 + cfg % 2, 2, 4, 2 + 2 * (cfg % 2)], 1.0)],
            Box::new(|g, v| g.maxpool2d(v[0]).unwrap()),
        )
    });
    run("upsample_nearest", &|r, cfg| {
        (
            vec![random_tensor(r, &[1, 1 + cfg % 3, 2, 3], 1.0)],
            Box::new(|g, v| g.upsample_nearest(v[0]).unwrap()),
        )
    });
    run("normalize_instance", &|r, cfg| {
        let c = 1 + cfg % 3;
        (
            vec![
                random_tensor(r, &[2, c, 3, 3], 1.0),
                random_tensor(r, &[c], 1.0),
                random_tensor(r, &[c], 1.0),
            ],
            Box::new(|g, v| g.normalize(v[0], NormMode::Instance, v[1], v[2]).unwrap().0),
        )
    });
    run("normalize_batch", &|r, cfg| {
        let c = 1 + cfg % 3;
        (
            vec![
                random_tensor(r, &[3, c, 2, 3], 1.0),
                random_tensor(r, &[c], 1.0),
                random_tensor(r, &[c], 1.0),
            ],
            Box::new(|g, v| g.normalize(v[0], NormMode::BatchTrain, v[1], v[2]).unwrap().0),
        )
    });
    for (op, kind) in [
        ("leaky_relu", Activation::LeakyRelu),
        ("relu", Activation::Relu),
        ("sigmoid", Activation::Sigmoid),
        ("tanh", Activation::Tanh),
    ] {
        run(op, &move |r, cfg| {
            (
                vec![random_tensor(r, &[2, 3 + cfg], 2.0)],
                Box::new(move |g, v| g.activation(v[0], kind).unwrap()),
            )
        });
    }
    run("dense", &|r, cfg| {
        let (n, d, k) = (1 + cfg % 3, 2 + cfg, 3);
        (
            vec![
                random_tensor(r, &[n, d], 1.0),
                random_tensor(r, &[d, k], 1.0),
                random_tensor(r, &[k], 1.0),
            ],
            Box::new(|g, v| g.dense(v[0], v[1], v[2]).unwrap()),
        )
    });
    run("concat_channels", &|r, cfg| {
        (
            vec![
                random_tensor(r, &[2, 1 + cfg % 2, 2, 2], 1.0),
                random_tensor(r, &[2, 1 + cfg % 3, 2, 2], 1.0),
            ],
            Box::new(|g, v| g.concat_channels(v[0], v[1]).unwrap()),
        )
    });
    run("slice_channels", &|r, cfg| {
        (
            vec![random_tensor(r, &[2, 4, 2, 2], 1.0)],
            Box::new(move |g, v| g.slice_channels(v[0], cfg % 3, 1 + cfg % 2).unwrap()),
        )
    });
    run("reshape", &|r, _| {
        (
            vec![random_tensor(r, &[1, 2, 2, 3], 1.0)],
            Box::new(|g, v| g.reshape(v[0], &[2, 6]).unwrap()),
        )
    });
    run("add_mul_scale_exp", &|r, cfg| {
        let shape = [2, 2 + cfg];
        (
            vec![random_tensor(r, &shape, 1.0), random_tensor(r, &shape, 1.0)],
            Box::new(|g, v| {
                let a = g.add(v[0], v[1]).unwrap();
                let m = g.mul(a, v[1]).unwrap();
                let s = g.scale(m, 0.7).unwrap();
                g.exp(s).unwrap()
            }),
        )
    });
    run("sum_mean", &|r, cfg| {
        (
            vec![random_tensor(r, &[3, 1 + cfg], 1.0)],
            Box::new(|g, v| {
                let s = g.sum(v[0]).unwrap();
                let m = g.mean(v[0]).unwrap();
                let p = g.mul(s, m).unwrap();
                g.add(p, m).unwrap()
            }),
        )
    });
    run("bce", &|r, cfg| {
        let shape = [1, 1, 3, 2 + cfg];
        let s = Tensor::from_fn(shape.to_vec(), |_| r.random_range(0.05..0.95));
        let target = Tensor::from_fn(shape.to_vec(), |_| if r.random_bool(0.5) { 1.0 } else { 0.0 });
        let mut mask = Tensor::from_fn(shape.to_vec(), |_| if r.random_bool(0.7) { 1.0 } else { 0.0 });
        mask.data_mut()[0] = 1.0;
        (vec![s], Box::new(move |g, v| g.bce(v[0], &target, &mask).unwrap()))
    });
    run("mse", &|r, cfg| {
        let shape = [2, 1, 2, 1 + cfg];
        (
            vec![random_tensor(r, &shape, 1.0), random_tensor(r, &shape, 1.0)],
            Box::new(|g, v| g.mse(v[0], v[1]).unwrap()),
        )
    });
    run("kl_diag_gaussian", &|r, cfg| {
        let shape = [1 + cfg % 2, 4];
        (
            vec![random_tensor(r, &shape, 1.0), random_tensor(r, &shape, 1.0)],
            Box::new(|g, v| g.kl_diag_gaussian(v[0], v[1]).unwrap()),
        )
    });
    run("composite_conv_norm_relu_sum", &|r, cfg| {
        let c = 1 + cfg % 2;
        (
            vec![
                random_tensor(r, &[2, c, 4, 4], 1.0),
                random_tensor(r, &[2, c, 3, 3], 0.5),
                random_tensor(r, &[2], 0.5),
                random_tensor(r, &[2], 1.0),
                random_tensor(r, &[2], 1.0),
            ],
            Box::new(|g, v| {
                let y = g.conv2d(v[0], v[1], v[2]).unwrap();
                let (n, _) = g.normalize(y, NormMode::Instance, v[3], v[4]).unwrap();
                let a = g.activation(n, Activation::Relu).unwrap();
                g.sum(a).unwrap()
            }),
        )
    });
    results
}
