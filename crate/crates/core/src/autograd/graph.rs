use super::kernels::{self, Geom};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// Leaky ReLU with negative slope 0.01.
    LeakyRelu,
    Relu,
    Sigmoid,
    Tanh,
}

pub const LEAKY_SLOPE: f64 = 0.01;
pub const NORM_EPS: f64 = 1e-5;
pub const BCE_CLAMP: f64 = 1e-7;

/// How a normalization layer obtains its statistics.
#[derive(Clone, Debug)]
pub enum NormMode<'a, T> {
    /// Per (n, c) plane.
    Instance,
    /// Per channel across the batch, from the current batch.
    BatchTrain,
    /// Per channel, using stored running statistics.
    BatchEval { mean: &'a [T], var: &'a [T] },
}

/// Batch statistics produced by a training-mode batch norm. `var` is the
/// unbiased estimate, ready for a running-average update.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: Geom,
    },
    ConvT2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: Geom,
    },
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    Upsample {
        input: Var,
        nc: usize,
        h: usize,
        w: usize,
    },
    Norm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        /// (groups, channels, group size, plane, whether stats depend on x)
        layout: NormLayout,
    },
    Act {
        input: Var,
        kind: Activation,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Slice {
        input: Var,
        start: usize,
    },
    Reshape {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Exp {
        input: Var,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
    Bce {
        input: Var,
        coef: Vec<T>,
    },
    Mse {
        a: Var,
        b: Var,
    },
    Kl {
        mu: Var,
        log_var: Var,
    },
}

#[derive(Clone, Copy, Debug)]
struct NormLayout {
    n: usize,
    c: usize,
    plane: usize,
    instance: bool,
    batch_stats: bool,
}

impl NormLayout {
    /// Statistic group of flat element `i`.
    #[inline]
    fn group(&self, i: usize) -> usize {
        let nc = i / self.plane;
        if self.instance {
            nc
        } else {
            nc % self.c
        }
    }

    #[inline]
    fn channel(&self, i: usize) -> usize {
        (i / self.plane) % self.c
    }

    fn groups(&self) -> usize {
        if self.instance {
            self.n * self.c
        } else {
            self.c
        }
    }

    fn group_size(&self) -> usize {
        if self.instance {
            self.plane
        } else {
            self.n * self.plane
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of recorded operations. Nodes are appended in execution order, so the
/// node list is already topologically sorted and backward is a reverse scan.
#[derive(Debug)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a, b)));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_unchecked(value, Op::Leaf, requires_grad)
    }

    /// Copy of `x` cut off from the tape.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, x: Var) -> &Tensor<T> {
        &self.nodes[x.0].value
    }

    pub fn shape(&self, x: Var) -> &[usize] {
        self.nodes[x.0].value.shape()
    }

    pub fn requires_grad(&self, x: Var) -> bool {
        self.nodes[x.0].requires_grad
    }

    pub fn grad(&self, x: Var) -> Option<&Tensor<T>> {
        self.grads.get(x.0).and_then(|g| g.as_ref())
    }

    /// Clears gradients so `backward` may run again on the same tape.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push_unchecked(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numerical(format!("{name} produced a non-finite value")));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    // ---------------------------------------------------------------- ops

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, cin, h, w) = self.value(input).dims4("conv2d")?;
        let ws = self.shape(weight).to_vec();
        if ws.len() != 4 || ws[1] != cin || ws[2] != 3 || ws[3] != 3 {
            return Err(Error::dim(
                "conv2d",
                format!("weight {:?} incompatible with input channels {}", ws, cin),
            ));
        }
        let cout = ws[0];
        same_shape("conv2d bias", self.shape(bias), &[cout])?;
        let geom = Geom { n, cin, cout, h, w };
        let out = kernels::conv3x3_forward(
            geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(vec![n, cout, h, w], out)?;
        self.push(
            "conv2d",
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            &[input, weight, bias],
        )
    }

    /// Stride-2 transposed 3×3 convolution; weight is Cin×Cout×3×3.
    pub fn conv_transpose2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, cin, h, w) = self.value(input).dims4("conv_transpose2d")?;
        let ws = self.shape(weight).to_vec();
        if ws.len() != 4 || ws[0] != cin || ws[2] != 3 || ws[3] != 3 {
            return Err(Error::dim(
                "conv_transpose2d",
                format!("weight {:?} incompatible with input channels {}", ws, cin),
            ));
        }
        let cout = ws[1];
        same_shape("conv_transpose2d bias", self.shape(bias), &[cout])?;
        let geom = Geom { n, cin, cout, h, w };
        let out = kernels::convt_forward(
            geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(vec![n, cout, 2 * h, 2 * w], out)?;
        self.push(
            "conv_transpose2d",
            value,
            Op::ConvT2d {
                input,
                weight,
                bias,
                geom,
            },
            &[input, weight, bias],
        )
    }

    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("maxpool2d")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim("maxpool2d", format!("spatial size {}×{} is not even", h, w)));
        }
        let (out, argmax) = kernels::maxpool_forward(n * c, h, w, self.value(input).data());
        let value = Tensor::new(vec![n, c, h / 2, w / 2], out)?;
        self.push("maxpool2d", value, Op::MaxPool { input, argmax }, &[input])
    }

    pub fn upsample_nearest(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("upsample_nearest")?;
        let out = kernels::upsample_forward(n * c, h, w, self.value(input).data());
        let value = Tensor::new(vec![n, c, 2 * h, 2 * w], out)?;
        self.push(
            "upsample_nearest",
            value,
            Op::Upsample { input, nc: n * c, h, w },
            &[input],
        )
    }

    /// Normalization followed by per-channel affine `gamma * x̂ + beta`.
    pub fn normalize(
        &mut self,
        input: Var,
        mode: NormMode<'_, T>,
        gamma: Var,
        beta: Var,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (n, c, h, w) = self.value(input).dims4("normalize")?;
        same_shape("normalize gamma", self.shape(gamma), &[c])?;
        same_shape("normalize beta", self.shape(beta), &[c])?;
        let layout = NormLayout {
            n,
            c,
            plane: h * w,
            instance: matches!(mode, NormMode::Instance),
            batch_stats: !matches!(mode, NormMode::BatchEval { .. }),
        };
        let eps = T::of(NORM_EPS);
        let x = self.value(input).data();
        let groups = layout.groups();
        let m = layout.group_size();
        let (mean, var) = match mode {
            NormMode::BatchEval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::dim("normalize", "running statistics length"));
                }
                (mean.to_vec(), var.to_vec())
            }
            _ => {
                let mut sum = vec![T::zero(); groups];
                for (i, &v) in x.iter().enumerate() {
                    let g = layout.group(i);
                    sum[g] = sum[g] + v;
                }
                let mean: Vec<T> = sum.iter().map(|&s| s / T::of(m as f64)).collect();
                let mut sq = vec![T::zero(); groups];
                for (i, &v) in x.iter().enumerate() {
                    let g = layout.group(i);
                    let d = v - mean[g];
                    sq[g] = sq[g] + d * d;
                }
                let var = sq.iter().map(|&s| s / T::of(m as f64)).collect();
                (mean, var)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for i in 0..x.len() {
            let g = layout.group(i);
            let ch = layout.channel(i);
            xhat[i] = (x[i] - mean[g]) * inv_std[g];
            out[i] = gv[ch] * xhat[i] + bv[ch];
        }
        let stats = if !layout.instance && layout.batch_stats {
            let unbias = if m > 1 {
                T::of(m as f64 / (m as f64 - 1.0))
            } else {
                T::one()
            };
            Some(BatchStats {
                var: var.iter().map(|&v| v * unbias).collect(),
                mean,
            })
        } else {
            None
        };
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let var = self.push(
            "normalize",
            value,
            Op::Norm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                layout,
            },
            &[input, gamma, beta],
        )?;
        Ok((var, stats))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        let slope = T::of(LEAKY_SLOPE);
        let value = self.value(input).map(|v| match kind {
            Activation::LeakyRelu => {
                if v > T::zero() {
                    v
                } else {
                    v * slope
                }
            }
            Activation::Relu => v.max(T::zero()),
            Activation::Sigmoid => T::one() / (T::one() + (-v).exp()),
            Activation::Tanh => v.tanh(),
        });
        self.push("activation", value, Op::Act { input, kind }, &[input])
    }

    /// `input` N×D times `weight` D×K plus `bias` K.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::dim("dense", format!("input {:?} weight {:?}", xs, ws)));
        }
        let (n, d, k) = (xs[0], xs[1], ws[1]);
        same_shape("dense bias", self.shape(bias), &[k])?;
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let b = self.value(bias).data();
        let mut out = vec![T::zero(); n * k];
        for r in 0..n {
            let row = &mut out[r * k..][..k];
            row.copy_from_slice(b);
            for i in 0..d {
                let xv = x[r * d + i];
                for (o, &wv) in row.iter_mut().zip(&wt[i * k..][..k]) {
                    *o = *o + xv * wv;
                }
            }
        }
        let value = Tensor::new(vec![n, k], out)?;
        self.push(
            "dense",
            value,
            Op::Dense { input, weight, bias },
            &[input, weight, bias],
        )
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca, ha, wa) = self.value(a).dims4("concat_channels")?;
        let (nb, cb, hb, wb) = self.value(b).dims4("concat_channels")?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::dim(
                "concat_channels",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let plane = ha * wa;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(na * (ca + cb) * plane);
        for n in 0..na {
            out.extend_from_slice(&av[n * ca * plane..][..ca * plane]);
            out.extend_from_slice(&bv[n * cb * plane..][..cb * plane]);
        }
        let value = Tensor::new(vec![na, ca + cb, ha, wa], out)?;
        self.push("concat_channels", value, Op::Concat { a, b }, &[a, b])
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(input).channels(start, len)?;
        self.push("slice_channels", value, Op::Slice { input, start }, &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape { input }, &[input])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push("add", value, Op::Add { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push("mul", value, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let f = T::of(factor);
        let value = self.value(input).map(|v| v * f);
        self.push("scale", value, Op::Scale { input, factor: f }, &[input])
    }

    pub fn exp(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(|v| v.exp());
        self.push("exp", value, Op::Exp { input }, &[input])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(input).sum());
        self.push("sum", value, Op::Sum { input }, &[input])
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        let value = Tensor::scalar(t.sum() / T::of(t.numel() as f64));
        self.push("mean", value, Op::Mean { input }, &[input])
    }

    /// Binary cross-entropy of probabilities `input` against `target`,
    /// averaged over pixels where `mask` is set. Probabilities are clamped to
    /// `[1e-7, 1-1e-7]`; the gradient vanishes where clamping is active.
    pub fn bce(&mut self, input: Var, target: &Tensor<T>, mask: &Tensor<T>) -> Result<Var> {
        same_shape("bce target", self.shape(input), target.shape())?;
        same_shape("bce mask", self.shape(input), mask.shape())?;
        let count = mask.data().iter().filter(|&&m| m > T::zero()).count();
        if count == 0 {
            return Err(Error::Usage("bce: empty mask".into()));
        }
        let inv = T::one() / T::of(count as f64);
        let lo = T::of(BCE_CLAMP);
        let hi = T::one() - lo;
        let s = self.value(input).data();
        let mut total = T::zero();
        let mut coef = vec![T::zero(); s.len()];
        for i in 0..s.len() {
            if mask.data()[i] <= T::zero() {
                continue;
            }
            let g = target.data()[i];
            let p = s[i].max(lo).min(hi);
            total = total - (g * p.ln() + (T::one() - g) * (T::one() - p).ln());
            if s[i] > lo && s[i] < hi {
                coef[i] = -(g / p - (T::one() - g) / (T::one() - p)) * inv;
            }
        }
        let value = Tensor::scalar(total * inv);
        self.push("bce", value, Op::Bce { input, coef }, &[input])
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mse", self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let total: T = av.iter().zip(bv).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let value = Tensor::scalar(total / T::of(av.len() as f64));
        self.push("mse", value, Op::Mse { a, b }, &[a, b])
    }

    /// KL divergence of N(mu, exp(log_var)) from N(0, I), summed over the
    /// latent dimensions and averaged over the batch (first axis).
    pub fn kl_diag_gaussian(&mut self, mu: Var, log_var: Var) -> Result<Var> {
        same_shape("kl_diag_gaussian", self.shape(mu), self.shape(log_var))?;
        let batch = self.shape(mu).first().copied().unwrap_or(1).max(1);
        let (m, lv) = (self.value(mu).data(), self.value(log_var).data());
        let half = T::of(0.5);
        let total: T = m.iter().zip(lv).map(|(&u, &l)| u * u + l.exp() - T::one() - l).sum();
        let value = Tensor::scalar(half * total / T::of(batch as f64));
        self.push("kl_diag_gaussian", value, Op::Kl { mu, log_var }, &[mu, log_var])
    }

    // ----------------------------------------------------------- backward

    /// Reverse sweep from a scalar `loss`. Every leaf created with
    /// `requires_grad` ends up with a gradient (zeros when unreachable).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Usage("backward called twice without reset_grads".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            self.fill_leaf_grads();
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad || matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let Some(gy) = self.grads[idx].take() else { continue };
            self.backprop_node(idx, &gy)?;
            self.grads[idx] = Some(gy);
        }
        self.fill_leaf_grads();
        Ok(())
    }

    fn fill_leaf_grads(&mut self) {
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && self.grads[i].is_none() {
                self.grads[i] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
    }

    fn accumulate(&mut self, target: Var, delta: Vec<T>) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut self.grads[target.0] {
            Some(g) => {
                for (a, d) in g.data_mut().iter_mut().zip(delta) {
                    *a = *a + d;
                }
            }
            slot @ None => {
                let shape = self.nodes[target.0].value.shape().to_vec();
                *slot = Some(Tensor::new(shape, delta).expect("gradient shape"));
            }
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&mut self, idx: usize, gy: &Tensor<T>) -> Result<()> {
        let g = gy.data();
        // Compute all deltas while borrowing the node immutably, then apply.
        let mut deltas: Vec<(Var, Vec<T>)> = Vec::with_capacity(3);
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let (x, wt) = (self.value(*input).data(), self.value(*weight).data());
                if self.needs(*input) {
                    deltas.push((*input, kernels::conv3x3_backward_input(*geom, g, wt)));
                }
                if self.needs(*weight) {
                    deltas.push((*weight, kernels::conv3x3_backward_weight(*geom, g, x)));
                }
                if self.needs(*bias) {
                    deltas.push((*bias, kernels::channel_sums(g, geom.n, geom.cout, geom.h * geom.w)));
                }
            }
            Op::ConvT2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let (x, wt) = (self.value(*input).data(), self.value(*weight).data());
                if self.needs(*input) {
                    deltas.push((*input, kernels::convt_backward_input(*geom, g, wt)));
                }
                if self.needs(*weight) {
                    deltas.push((*weight, kernels::convt_backward_weight(*geom, g, x)));
                }
                if self.needs(*bias) {
                    deltas.push((*bias, kernels::channel_sums(g, geom.n, geom.cout, 4 * geom.h * geom.w)));
                }
            }
            Op::MaxPool { input, argmax } => {
                let mut gin = vec![T::zero(); self.value(*input).numel()];
                for (o, &src) in argmax.iter().enumerate() {
                    gin[src as usize] = gin[src as usize] + g[o];
                }
                deltas.push((*input, gin));
            }
            Op::Upsample { input, nc, h, w } => {
                deltas.push((*input, kernels::upsample_backward(*nc, *h, *w, g)));
            }
            Op::Norm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                layout,
            } => {
                let gv = self.value(*gamma).data();
                if self.needs(*gamma) {
                    let mut dg = vec![T::zero(); layout.c];
                    for i in 0..g.len() {
                        let ch = layout.channel(i);
                        dg[ch] = dg[ch] + g[i] * xhat[i];
                    }
                    deltas.push((*gamma, dg));
                }
                if self.needs(*beta) {
                    let mut db = vec![T::zero(); layout.c];
                    for (i, &gi) in g.iter().enumerate() {
                        let ch = layout.channel(i);
                        db[ch] = db[ch] + gi;
                    }
                    deltas.push((*beta, db));
                }
                if self.needs(*input) {
                    let mut dx = vec![T::zero(); g.len()];
                    if layout.batch_stats {
                        let groups = layout.groups();
                        let m = T::of(layout.group_size() as f64);
                        let mut s1 = vec![T::zero(); groups];
                        let mut s2 = vec![T::zero(); groups];
                        for i in 0..g.len() {
                            let grp = layout.group(i);
                            let dxh = g[i] * gv[layout.channel(i)];
                            s1[grp] = s1[grp] + dxh;
                            s2[grp] = s2[grp] + dxh * xhat[i];
                        }
                        for i in 0..g.len() {
                            let grp = layout.group(i);
                            let dxh = g[i] * gv[layout.channel(i)];
                            dx[i] = inv_std[grp] / m * (m * dxh - s1[grp] - xhat[i] * s2[grp]);
                        }
                    } else {
                        for i in 0..g.len() {
                            let ch = layout.channel(i);
                            dx[i] = g[i] * gv[ch] * inv_std[ch];
                        }
                    }
                    deltas.push((*input, dx));
                }
            }
            Op::Act { input, kind } => {
                let (x, y) = (self.value(*input).data(), node.value.data());
                let slope = T::of(LEAKY_SLOPE);
                let dx = g
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&gi, (&xi, &yi))| match kind {
                        Activation::LeakyRelu => {
                            if xi > T::zero() {
                                gi
                            } else {
                                gi * slope
                            }
                        }
                        Activation::Relu => {
                            if xi > T::zero() {
                                gi
                            } else {
                                T::zero()
                            }
                        }
                        Activation::Sigmoid => gi * yi * (T::one() - yi),
                        Activation::Tanh => gi * (T::one() - yi * yi),
                    })
                    .collect();
                deltas.push((*input, dx));
            }
            Op::Dense { input, weight, bias } => {
                let xs = self.shape(*input);
                let (n, d) = (xs[0], xs[1]);
                let k = self.shape(*weight)[1];
                let (x, wt) = (self.value(*input).data(), self.value(*weight).data());
                if self.needs(*input) {
                    let mut dx = vec![T::zero(); n * d];
                    for r in 0..n {
                        let gr = &g[r * k..][..k];
                        for i in 0..d {
                            dx[r * d + i] = gr.iter().zip(&wt[i * k..][..k]).map(|(&a, &b)| a * b).sum();
                        }
                    }
                    deltas.push((*input, dx));
                }
                if self.needs(*weight) {
                    let mut dw = vec![T::zero(); d * k];
                    for r in 0..n {
                        let gr = &g[r * k..][..k];
                        for i in 0..d {
                            let xv = x[r * d + i];
                            for (o, &gv) in dw[i * k..][..k].iter_mut().zip(gr) {
                                *o = *o + xv * gv;
                            }
                        }
                    }
                    deltas.push((*weight, dw));
                }
                if self.needs(*bias) {
                    let mut db = vec![T::zero(); k];
                    for r in 0..n {
                        for (o, &gv) in db.iter_mut().zip(&g[r * k..][..k]) {
                            *o = *o + gv;
                        }
                    }
                    deltas.push((*bias, db));
                }
            }
            Op::Concat { a, b } => {
                let (n, ca, h, w) = self.value(*a).dims4("concat")?;
                let cb = self.shape(*b)[1];
                let plane = h * w;
                let (mut ga, mut gb) = (Vec::with_capacity(n * ca * plane), Vec::with_capacity(n * cb * plane));
                for bi in 0..n {
                    let base = bi * (ca + cb) * plane;
                    ga.extend_from_slice(&g[base..base + ca * plane]);
                    gb.extend_from_slice(&g[base + ca * plane..base + (ca + cb) * plane]);
                }
                deltas.push((*a, ga));
                deltas.push((*b, gb));
            }
            Op::Slice { input, start } => {
                let (n, c, h, w) = self.value(*input).dims4("slice")?;
                let len = node.value.shape()[1];
                let plane = h * w;
                let mut gin = vec![T::zero(); n * c * plane];
                for bi in 0..n {
                    let dst = (bi * c + start) * plane;
                    gin[dst..dst + len * plane].copy_from_slice(&g[bi * len * plane..][..len * plane]);
                }
                deltas.push((*input, gin));
            }
            Op::Reshape { input } => deltas.push((*input, g.to_vec())),
            Op::Add { a, b } => {
                deltas.push((*a, g.to_vec()));
                deltas.push((*b, g.to_vec()));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                deltas.push((*a, g.iter().zip(bv).map(|(&gi, &y)| gi * y).collect()));
                deltas.push((*b, g.iter().zip(av).map(|(&gi, &x)| gi * x).collect()));
            }
            Op::Scale { input, factor } => {
                deltas.push((*input, g.iter().map(|&gi| gi * *factor).collect()));
            }
            Op::Exp { input } => {
                let y = node.value.data();
                deltas.push((*input, g.iter().zip(y).map(|(&gi, &yi)| gi * yi).collect()));
            }
            Op::Sum { input } => {
                deltas.push((*input, vec![g[0]; self.value(*input).numel()]));
            }
            Op::Mean { input } => {
                let n = self.value(*input).numel();
                deltas.push((*input, vec![g[0] / T::of(n as f64); n]));
            }
            Op::Bce { input, coef } => {
                deltas.push((*input, coef.iter().map(|&c| c * g[0]).collect()));
            }
            Op::Mse { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let k = T::of(2.0) * g[0] / T::of(av.len() as f64);
                let da: Vec<T> = av.iter().zip(bv).map(|(&x, &y)| k * (x - y)).collect();
                if self.needs(*b) {
                    deltas.push((*b, da.iter().map(|&v| -v).collect()));
                }
                deltas.push((*a, da));
            }
            Op::Kl { mu, log_var } => {
                let batch = self.shape(*mu).first().copied().unwrap_or(1).max(1);
                let k = g[0] / T::of(batch as f64);
                let (m, lv) = (self.value(*mu).data(), self.value(*log_var).data());
                deltas.push((*mu, m.iter().map(|&u| k * u).collect()));
                let half = T::of(0.5);
                deltas.push((*log_var, lv.iter().map(|&l| k * half * (l.exp() - T::one())).collect()));
            }
        }
        for (target, delta) in deltas {
            self.accumulate(target, delta);
        }
        Ok(())
    }
}
