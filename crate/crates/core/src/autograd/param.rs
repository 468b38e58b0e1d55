use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Updated outside the optimizer (batch-norm running statistics).
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub frozen: bool,
    pub value: Tensor<f32>,
    pub grad: Option<Tensor<f32>>,
    /// Adam first and second moments, same length as `value`.
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

/// Ordered, named parameters of one network plus optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    /// Number of optimizer steps taken.
    pub step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for Adam {
    fn default() -> Self {
        Self::with_lr(1e-3)
    }
}

impl Adam {
    pub fn with_lr(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Graph leaves created for a store by [`ParamStore::bind`], indexed like the
/// store itself.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<f32>) -> usize {
        let n = value.numel();
        self.params.push(Param {
            name: name.into(),
            kind,
            frozen: false,
            value,
            grad: None,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn get(&self, index: usize) -> &Param {
        &self.params[index]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for p in &mut self.params {
            p.frozen = frozen;
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.params.iter().all(|p| p.frozen)
    }

    /// Total element count of trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Records every parameter as a leaf. Frozen parameters and buffers are
    /// recorded without gradient tracking.
    pub fn bind(&self, graph: &mut Graph<f32>) -> Binding {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let track = p.kind == ParamKind::Trainable && !p.frozen;
                graph.leaf(p.value.clone(), track)
            })
            .collect();
        Binding { vars }
    }

    /// Adds the graph gradients of bound, tracked parameters into `grad`.
    pub fn collect_grads(&mut self, graph: &Graph<f32>, binding: &Binding) {
        for (p, &var) in self.params.iter_mut().zip(&binding.vars) {
            if !graph.requires_grad(var) {
                continue;
            }
            let Some(g) = graph.grad(var) else { continue };
            match &mut p.grad {
                Some(acc) => {
                    for (a, &d) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += d;
                    }
                }
                None => p.grad = Some(g.clone()),
            }
        }
    }

    /// Clears Adam moments and the step count, as for a fresh optimizer.
    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for p in &mut self.params {
            p.m.iter_mut().for_each(|x| *x = 0.0);
            p.v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// One bias-corrected Adam update of every unfrozen trainable parameter;
    /// gradients are cleared afterwards.
    pub fn adam_step(&mut self, opt: &Adam) -> Result<()> {
        if let Some(p) = self
            .params
            .iter()
            .find(|p| p.kind == ParamKind::Trainable && !p.frozen && p.grad.is_none())
        {
            return Err(Error::Usage(format!("parameter {} has no gradient", p.name)));
        }
        let t = (self.step + 1) as i32;
        let c1 = 1.0 - opt.beta1.powi(t);
        let c2 = 1.0 - opt.beta2.powi(t);
        for p in &mut self.params {
            if p.kind != ParamKind::Trainable || p.frozen {
                continue;
            }
            let g = p.grad.take().expect("checked above");
            for (((w, m), v), &gi) in p.value.data_mut().iter_mut().zip(&mut p.m).zip(&mut p.v).zip(g.data()) {
                *m = opt.beta1 * *m + (1.0 - opt.beta1) * gi;
                *v = opt.beta2 * *v + (1.0 - opt.beta2) * gi * gi;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w -= opt.lr * mhat / (vhat.sqrt() + opt.eps);
            }
        }
        self.step += 1;
        self.zero_grads();
        Ok(())
    }

    /// FNV-1a hash over names and raw values; used to assert freezing.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for p in &self.params {
            eat(p.name.as_bytes());
            for v in p.value.data() {
                eat(&v.to_le_bytes());
            }
        }
        h
    }
}
