//! The three networks: a U-Net for the base segmentation, a VAE that injects
//! shape-plausible errors, and a shallow U-Net that predicts a signed error
//! map. Each network is a flat layer program interpreted over a [`Graph`];
//! the same program yields a symbolic shape trace without allocating weights.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Activation, Binding, Graph, NormMode, ParamKind, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

pub const INJECT_VARIANCE: f64 = 1e-4;
const BN_MOMENTUM: f32 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    /// Pixels per side of the (square) input.
    pub resolution: usize,
    /// Channels of the first block.
    pub base_width: usize,
    /// Multiplier applied to every channel count.
    pub width_scale: f64,
}

impl NetworkSpec {
    pub fn canonical() -> Self {
        Self {
            resolution: 640,
            base_width: 32,
            width_scale: 1.0,
        }
    }

    pub fn desk() -> Self {
        Self {
            resolution: 64,
            base_width: 4,
            width_scale: 1.0,
        }
    }

    pub fn latent_side(&self) -> usize {
        self.resolution / 8
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_side() * self.latent_side()
    }

    /// Channel count for a block `mult` times as wide as the first.
    pub fn channels(&self, mult: usize) -> usize {
        ((self.base_width * mult) as f64 * self.width_scale).round().max(1.0) as usize
    }

    pub fn validate(&self, kind: NetKind) -> Result<()> {
        let pools = kind.pools();
        let div = 1 << pools;
        if self.resolution == 0 || self.resolution % div != 0 {
            return Err(Error::Config(format!(
                "resolution {} must be a positive multiple of {} for the {} network",
                self.resolution, div, kind
            )));
        }
        if self.base_width == 0 || !(self.width_scale > 0.0) || !self.width_scale.is_finite() {
            return Err(Error::Config("base_width and width_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NetKind {
    Segmentation,
    Injection,
    Prediction,
}

impl NetKind {
    pub fn prefix(self) -> &'static str {
        match self {
            NetKind::Segmentation => "seg",
            NetKind::Injection => "vae",
            NetKind::Prediction => "err",
        }
    }

    pub fn from_prefix(s: &str) -> Option<Self> {
        match s {
            "seg" => Some(NetKind::Segmentation),
            "vae" => Some(NetKind::Injection),
            "err" => Some(NetKind::Prediction),
            _ => None,
        }
    }

    fn pools(self) -> u32 {
        match self {
            NetKind::Segmentation => 4,
            _ => 3,
        }
    }
}

impl fmt::Display for NetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetKind::Segmentation => "segmentation",
            NetKind::Injection => "error-injection",
            NetKind::Prediction => "error-prediction",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    Instance,
    Batch,
}

/// How the VAE draws its latent code.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LatentMode {
    /// `z = mu + exp(log_var / 2) * eps`, `eps ~ N(0, I)`.
    Train,
    /// `z = mu + eps`, `eps ~ N(0, variance * I)`.
    Inject { variance: f64 },
    /// `z = mu`.
    Mean,
}

/// Seeded Gaussian source for latent sampling that counts its draws.
#[derive(Clone, Debug)]
pub struct LatentSampler {
    rng: ChaCha8Rng,
    draws: u64,
}

impl LatentSampler {
    pub fn new(seed: u64) -> Self {
        Self::from_rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        Self { rng, draws: 0 }
    }

    pub fn resume(rng: ChaCha8Rng, draws: u64) -> Self {
        Self { rng, draws }
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn standard_normal(&mut self, shape: &[usize]) -> Tensor<f32> {
        let n: usize = shape.iter().product();
        self.draws += n as u64;
        let rng = &mut self.rng;
        Tensor::from_fn(shape.to_vec(), |_| StandardNormal.sample(rng))
    }
}

/// Latent draw with explicit standard-normal noise `eps`.
pub fn sample_latent_with_noise(
    g: &mut Graph<f32>,
    mu: Var,
    log_var: Var,
    mode: LatentMode,
    eps: Tensor<f32>,
) -> Result<Var> {
    if g.shape(mu) != g.shape(log_var) || g.shape(mu) != eps.shape() {
        return Err(Error::dim("sample_latent", "mu, log_var and noise shapes differ"));
    }
    match mode {
        LatentMode::Mean => Ok(mu),
        LatentMode::Train => {
            let half = g.scale(log_var, 0.5)?;
            let std = g.exp(half)?;
            let e = g.constant(eps);
            let spread = g.mul(std, e)?;
            g.add(mu, spread)
        }
        LatentMode::Inject { variance } => {
            let sd = variance.sqrt() as f32;
            let e = g.constant(eps.map(|v| v * sd));
            g.add(mu, e)
        }
    }
}

/// Latent draw; sampling modes require a seeded sampler.
pub fn sample_latent(
    g: &mut Graph<f32>,
    mu: Var,
    log_var: Var,
    mode: LatentMode,
    sampler: Option<&mut LatentSampler>,
) -> Result<Var> {
    if mode == LatentMode::Mean {
        return sample_latent_with_noise(g, mu, log_var, mode, Tensor::zeros(g.shape(mu).to_vec()));
    }
    let sampler = sampler.ok_or_else(|| Error::Usage("latent sampling needs a seeded sampler".into()))?;
    let eps = sampler.standard_normal(g.shape(mu));
    sample_latent_with_noise(g, mu, log_var, mode, eps)
}

/// Per-sample feature shape: `[c, h, w]` maps or `[d]` vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FeatShape {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl FeatShape {
    fn numel(&self) -> usize {
        match *self {
            FeatShape::Map { c, h, w } => c * h * w,
            FeatShape::Flat(d) => d,
        }
    }

    fn batched(&self, n: usize) -> Vec<usize> {
        match *self {
            FeatShape::Map { c, h, w } => vec![n, c, h, w],
            FeatShape::Flat(d) => vec![n, d],
        }
    }
}

impl fmt::Display for FeatShape {
    /// Height × width × channels, or the vector length.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            FeatShape::Map { c, h, w } => write!(f, "{} x {} x {}", h, w, c),
            FeatShape::Flat(d) => write!(f, "{}", d),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub label: String,
    pub inputs: Vec<FeatShape>,
    pub output: FeatShape,
}

#[derive(Clone, Debug)]
struct NormParams {
    kind: Norm,
    gamma: usize,
    beta: usize,
    running: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
enum StepKind {
    Conv {
        transpose: bool,
        weight: usize,
        bias: usize,
        norm: Option<NormParams>,
        act: Option<Activation>,
    },
    MaxPool,
    Upsample,
    Concat,
    Dense {
        weight: usize,
        bias: usize,
    },
    Sample,
    Reshape,
    Act(Activation),
}

#[derive(Clone, Debug)]
struct Step {
    label: String,
    kind: StepKind,
    inputs: Vec<usize>,
    shape: FeatShape,
}

#[derive(Clone, Copy, Debug)]
enum Init {
    He { fan_in: usize },
    Normal { std: f64 },
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
struct ParamDecl {
    name: String,
    kind: ParamKind,
    shape: Vec<usize>,
    init: Init,
}

/// Layer program with slot shapes resolved at build time.
#[derive(Clone, Debug)]
pub struct Program {
    kind: NetKind,
    inputs: Vec<FeatShape>,
    steps: Vec<Step>,
    params: Vec<ParamDecl>,
    outputs: Vec<usize>,
}

struct Builder {
    prog: Program,
    /// Shape of every slot; slots `0..inputs` are the program inputs.
    slots: Vec<FeatShape>,
}

impl Builder {
    fn new(kind: NetKind, inputs: Vec<FeatShape>) -> Self {
        Self {
            slots: inputs.clone(),
            prog: Program {
                kind,
                inputs,
                steps: Vec::new(),
                params: Vec::new(),
                outputs: Vec::new(),
            },
        }
    }

    fn param(&mut self, label: &str, what: &str, kind: ParamKind, shape: Vec<usize>, init: Init) -> usize {
        self.prog.params.push(ParamDecl {
            name: format!("{}.{}.{}", self.prog.kind.prefix(), label, what),
            kind,
            shape,
            init,
        });
        self.prog.params.len() - 1
    }

    fn step(&mut self, label: &str, kind: StepKind, inputs: Vec<usize>, shape: FeatShape) -> usize {
        self.prog.steps.push(Step {
            label: label.to_string(),
            kind,
            inputs,
            shape: shape.clone(),
        });
        self.slots.push(shape);
        self.slots.len() - 1
    }

    fn map_dims(&self, slot: usize) -> (usize, usize, usize) {
        match self.slots[slot] {
            FeatShape::Map { c, h, w } => (c, h, w),
            FeatShape::Flat(d) => panic!("slot of length {d} used as a feature map"),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_inner(
        &mut self,
        label: &str,
        x: usize,
        cout: usize,
        norm: Option<Norm>,
        act: Option<Activation>,
        transpose: bool,
        zero_weight: bool,
    ) -> usize {
        let (cin, h, w) = self.map_dims(x);
        let wshape = if transpose {
            vec![cin, cout, 3, 3]
        } else {
            vec![cout, cin, 3, 3]
        };
        let init = if zero_weight {
            Init::Zeros
        } else {
            Init::He { fan_in: cin * 9 }
        };
        let weight = self.param(label, "weight", ParamKind::Trainable, wshape, init);
        let bias = self.param(label, "bias", ParamKind::Trainable, vec![cout], Init::Zeros);
        let norm = norm.map(|kind| {
            let gamma = self.param(label, "gamma", ParamKind::Trainable, vec![cout], Init::Ones);
            let beta = self.param(label, "beta", ParamKind::Trainable, vec![cout], Init::Zeros);
            let running = (kind == Norm::Batch).then(|| {
                (
                    self.param(label, "running_mean", ParamKind::Buffer, vec![cout], Init::Zeros),
                    self.param(label, "running_var", ParamKind::Buffer, vec![cout], Init::Ones),
                )
            });
            NormParams {
                kind,
                gamma,
                beta,
                running,
            }
        });
        let (oh, ow) = if transpose { (2 * h, 2 * w) } else { (h, w) };
        self.step(
            label,
            StepKind::Conv {
                transpose,
                weight,
                bias,
                norm,
                act,
            },
            vec![x],
            FeatShape::Map { c: cout, h: oh, w: ow },
        )
    }

    fn conv(&mut self, label: &str, x: usize, cout: usize, norm: Norm, act: Activation) -> usize {
        self.conv_inner(label, x, cout, Some(norm), Some(act), false, false)
    }

    fn pool(&mut self, label: &str, x: usize) -> usize {
        let (c, h, w) = self.map_dims(x);
        self.step(
            label,
            StepKind::MaxPool,
            vec![x],
            FeatShape::Map { c, h: h / 2, w: w / 2 },
        )
    }

    fn upsample(&mut self, label: &str, x: usize) -> usize {
        let (c, h, w) = self.map_dims(x);
        self.step(
            label,
            StepKind::Upsample,
            vec![x],
            FeatShape::Map { c, h: 2 * h, w: 2 * w },
        )
    }

    fn concat(&mut self, label: &str, a: usize, b: usize) -> usize {
        let (ca, h, w) = self.map_dims(a);
        let (cb, _, _) = self.map_dims(b);
        self.step(label, StepKind::Concat, vec![a, b], FeatShape::Map { c: ca + cb, h, w })
    }

    fn dense(&mut self, label: &str, x: usize, dout: usize) -> usize {
        let din = self.slots[x].numel();
        let std = (1.0 / din as f64).sqrt();
        let weight = self.param(
            label,
            "weight",
            ParamKind::Trainable,
            vec![din, dout],
            Init::Normal { std },
        );
        let bias = self.param(label, "bias", ParamKind::Trainable, vec![dout], Init::Zeros);
        self.step(label, StepKind::Dense { weight, bias }, vec![x], FeatShape::Flat(dout))
    }

    /// Two-conv block used throughout the encoders and decoders.
    fn double_conv(&mut self, id: &str, x: usize, cout: usize, norm: Norm, act: Activation) -> usize {
        let a = self.conv(&format!("conv{id}a"), x, cout, norm, act);
        self.conv(&format!("conv{id}b"), a, cout, norm, act)
    }

    fn finish(mut self, outputs: Vec<usize>) -> Program {
        self.prog.outputs = outputs;
        self.prog
    }
}

impl Program {
    /// Base segmentation U-Net: four pooling levels, instance norm with
    /// leaky ReLU, nearest-neighbour upsampling and skip concatenations.
    pub fn segmentation(spec: &NetworkSpec) -> Result<Self> {
        spec.validate(NetKind::Segmentation)?;
        let r = spec.resolution;
        let (norm, act) = (Norm::Instance, Activation::LeakyRelu);
        let mut b = Builder::new(NetKind::Segmentation, vec![FeatShape::Map { c: 1, h: r, w: r }]);
        let c1 = b.double_conv("1", 0, spec.channels(1), norm, act);
        let p1 = b.pool("pool1", c1);
        let c2 = b.double_conv("2", p1, spec.channels(2), norm, act);
        let p2 = b.pool("pool2", c2);
        let c3 = b.double_conv("3", p2, spec.channels(4), norm, act);
        let p3 = b.pool("pool3", c3);
        let c4 = b.double_conv("4", p3, spec.channels(8), norm, act);
        let p4 = b.pool("pool4", c4);
        let c5 = b.double_conv("5", p4, spec.channels(16), norm, act);
        let u1 = b.upsample("up1", c5);
        let k1 = b.concat("concat1", u1, c4);
        let c6 = b.double_conv("6", k1, spec.channels(8), norm, act);
        let u2 = b.upsample("up2", c6);
        let k2 = b.concat("concat2", u2, c3);
        let c7 = b.double_conv("7", k2, spec.channels(4), norm, act);
        let u3 = b.upsample("up3", c7);
        let k3 = b.concat("concat3", u3, c2);
        let c8 = b.double_conv("8", k3, spec.channels(2), norm, act);
        let u4 = b.upsample("up4", c8);
        let k4 = b.concat("concat4", u4, c1);
        let c9 = b.double_conv("9", k4, spec.channels(1), norm, act);
        let out = b.conv_inner("out", c9, 1, None, Some(Activation::Sigmoid), false, false);
        Ok(b.finish(vec![out]))
    }

    /// Error-injection VAE. Outputs, in order: the two-channel
    /// (background, foreground) reconstruction, `mu`, `log_var`, `z`.
    pub fn injection(spec: &NetworkSpec) -> Result<Self> {
        spec.validate(NetKind::Injection)?;
        let r = spec.resolution;
        let side = spec.latent_side();
        let (norm, act) = (Norm::Batch, Activation::Relu);
        let mut b = Builder::new(NetKind::Injection, vec![FeatShape::Map { c: 1, h: r, w: r }]);
        let c1 = b.double_conv("1", 0, spec.channels(1), norm, act);
        let p1 = b.pool("pool1", c1);
        let c2 = b.double_conv("2", p1, spec.channels(2), norm, act);
        let p2 = b.pool("pool2", c2);
        let c3 = b.double_conv("3", p2, spec.channels(4), norm, act);
        let p3 = b.pool("pool3", c3);
        let e4a = b.conv("enc4a", p3, spec.channels(16), norm, act);
        let e4b = b.conv("enc4b", e4a, 1, norm, act);
        let mu = b.dense("dense_mu", e4b, spec.latent_dim());
        let log_var = b.dense("dense_logvar", e4b, spec.latent_dim());
        let z = b.step(
            "sample",
            StepKind::Sample,
            vec![mu, log_var],
            FeatShape::Flat(spec.latent_dim()),
        );
        let zr = b.step(
            "reshape",
            StepKind::Reshape,
            vec![z],
            FeatShape::Map { c: 1, h: side, w: side },
        );
        let t1 = b.conv_inner("convt1", zr, spec.channels(2), Some(norm), Some(act), true, false);
        let c5 = b.double_conv("5", t1, spec.channels(2), norm, act);
        let t2 = b.conv_inner("convt2", c5, spec.channels(1), Some(norm), Some(act), true, false);
        let c6 = b.double_conv("6", t2, spec.channels(1), norm, act);
        let u3 = b.upsample("up3", c6);
        let c7 = b.double_conv("7", u3, spec.channels(1), norm, act);
        let out = b.conv_inner("out", c7, 2, None, None, false, false);
        let (c, h, w) = b.map_dims(out);
        let sig = b.step(
            "sigmoid",
            StepKind::Act(Activation::Sigmoid),
            vec![out],
            FeatShape::Map { c, h, w },
        );
        Ok(b.finish(vec![sig, mu, log_var, z]))
    }

    /// Error predictor: shallow U-Net over (image, segmentation) with a tanh
    /// output. The output layer starts at zero so a fresh predictor makes no
    /// correction.
    pub fn prediction(spec: &NetworkSpec) -> Result<Self> {
        spec.validate(NetKind::Prediction)?;
        let r = spec.resolution;
        let (norm, act) = (Norm::Batch, Activation::Relu);
        let plane = FeatShape::Map { c: 1, h: r, w: r };
        let mut b = Builder::new(NetKind::Prediction, vec![plane.clone(), plane]);
        let x = b.concat("concat_in", 0, 1);
        let c1 = b.double_conv("1", x, spec.channels(1), norm, act);
        let p1 = b.pool("pool1", c1);
        let c2 = b.double_conv("2", p1, spec.channels(2), norm, act);
        let p2 = b.pool("pool2", c2);
        let c3 = b.double_conv("3", p2, spec.channels(4), norm, act);
        let p3 = b.pool("pool3", c3);
        let c4 = b.double_conv("4", p3, spec.channels(8), norm, act);
        let u2 = b.upsample("up2", c4);
        let k2 = b.concat("concat2", u2, c3);
        let c7 = b.double_conv("7", k2, spec.channels(4), norm, act);
        let u3 = b.upsample("up3", c7);
        let k3 = b.concat("concat3", u3, c2);
        let c8 = b.double_conv("8", k3, spec.channels(2), norm, act);
        let u4 = b.upsample("up4", c8);
        let k4 = b.concat("concat4", u4, c1);
        let c9 = b.double_conv("9", k4, spec.channels(1), norm, act);
        let out = b.conv_inner("out", c9, 1, None, Some(Activation::Tanh), false, true);
        Ok(b.finish(vec![out]))
    }

    pub fn build(kind: NetKind, spec: &NetworkSpec) -> Result<Self> {
        match kind {
            NetKind::Segmentation => Self::segmentation(spec),
            NetKind::Injection => Self::injection(spec),
            NetKind::Prediction => Self::prediction(spec),
        }
    }

    pub fn kind(&self) -> NetKind {
        self.kind
    }

    /// Layer-by-layer feature shapes, with batch dimension omitted.
    pub fn trace(&self) -> Vec<TraceRow> {
        let mut slots = self.inputs.clone();
        let mut rows = Vec::with_capacity(self.steps.len());
        for s in &self.steps {
            rows.push(TraceRow {
                label: s.label.clone(),
                inputs: s.inputs.iter().map(|&i| slots[i].clone()).collect(),
                output: s.shape.clone(),
            });
            slots.push(s.shape.clone());
        }
        rows
    }

    /// Trainable parameter count, derived from the declarations alone.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    }

    fn instantiate(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (self.kind as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut store = ParamStore::new();
        for p in &self.params {
            let shape = p.shape.clone();
            let value = match p.init {
                Init::Zeros => Tensor::zeros(shape),
                Init::Ones => Tensor::full(shape, 1.0),
                Init::He { fan_in } => {
                    let std = (2.0 / fan_in as f64).sqrt() as f32;
                    Tensor::from_fn(shape, |_| {
                        let e: f32 = StandardNormal.sample(&mut rng);
                        std * e
                    })
                }
                Init::Normal { std } => Tensor::from_fn(shape, |_| {
                    let e: f32 = StandardNormal.sample(&mut rng);
                    std as f32 * e
                }),
            };
            store.push(p.name.clone(), p.kind, value);
        }
        store
    }
}

/// Settings for one forward pass.
pub struct ForwardMode<'a> {
    /// Batch norm uses (and updates running averages from) batch statistics.
    /// Ignored for frozen networks, which always run in evaluation mode.
    pub train: bool,
    pub latent: LatentMode,
    pub sampler: Option<&'a mut LatentSampler>,
}

impl ForwardMode<'_> {
    pub fn eval() -> Self {
        Self {
            train: false,
            latent: LatentMode::Mean,
            sampler: None,
        }
    }

    pub fn train() -> Self {
        Self {
            train: true,
            latent: LatentMode::Mean,
            sampler: None,
        }
    }
}

/// Vars produced by one forward pass plus the parameter leaves it bound.
pub struct Pass {
    pub outputs: Vec<Var>,
    pub binding: Binding,
}

impl Pass {
    pub fn output(&self) -> Var {
        self.outputs[0]
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    program: Program,
    store: ParamStore,
}

impl Network {
    pub fn build(kind: NetKind, spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let program = Program::build(kind, spec)?;
        let store = program.instantiate(seed);
        Ok(Self {
            spec: spec.clone(),
            program,
            store,
        })
    }

    /// Rebuilds the program for `spec` and adopts `store`, checking that
    /// names and shapes line up.
    pub fn from_store(kind: NetKind, spec: &NetworkSpec, store: ParamStore) -> Result<Self> {
        let program = Program::build(kind, spec)?;
        if store.len() != program.params.len() {
            return Err(Error::Config(format!(
                "{} network expects {} parameters, store has {}",
                kind,
                program.params.len(),
                store.len()
            )));
        }
        for (decl, p) in program.params.iter().zip(store.params()) {
            if decl.name != p.name || decl.shape != p.value.shape() || decl.kind != p.kind {
                return Err(Error::Config(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.value.shape(),
                    decl.name,
                    decl.shape
                )));
            }
        }
        Ok(Self {
            spec: spec.clone(),
            program,
            store,
        })
    }

    pub fn kind(&self) -> NetKind {
        self.program.kind
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore {
        self.store
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.store.set_frozen(frozen);
    }

    pub fn is_frozen(&self) -> bool {
        self.store.is_frozen()
    }

    pub fn collect_grads(&mut self, g: &Graph<f32>, pass: &Pass) {
        self.store.collect_grads(g, &pass.binding);
    }

    /// Runs the program on `inputs` (one var per declared input).
    pub fn forward(&mut self, g: &mut Graph<f32>, inputs: &[Var], mode: &mut ForwardMode<'_>) -> Result<Pass> {
        let prog = &self.program;
        if inputs.len() != prog.inputs.len() {
            return Err(Error::Usage(format!(
                "{} network takes {} inputs, got {}",
                prog.kind,
                prog.inputs.len(),
                inputs.len()
            )));
        }
        let batch = g.shape(inputs[0])[0];
        for (v, want) in inputs.iter().zip(&prog.inputs) {
            if g.shape(*v) != want.batched(batch).as_slice() {
                return Err(Error::dim(
                    "forward",
                    format!("input {:?} does not match expected {}", g.shape(*v), want),
                ));
            }
        }
        let train_norm = mode.train && !self.store.is_frozen();
        let binding = self.store.bind(g);
        let mut slots: Vec<Var> = inputs.to_vec();
        let mut running_updates = Vec::new();
        for step in &prog.steps {
            let x = slots[step.inputs[0]];
            let y = match &step.kind {
                StepKind::Conv {
                    transpose,
                    weight,
                    bias,
                    norm,
                    act,
                } => {
                    let (w, b) = (binding.var(*weight), binding.var(*bias));
                    let mut y = if *transpose {
                        g.conv_transpose2d(x, w, b)?
                    } else {
                        g.conv2d(x, w, b)?
                    };
                    if let Some(np) = norm {
                        let (gamma, beta) = (binding.var(np.gamma), binding.var(np.beta));
                        let (out, stats) = match (np.kind, np.running) {
                            (Norm::Instance, _) => g.normalize(y, NormMode::Instance, gamma, beta)?,
                            (Norm::Batch, Some(_)) if train_norm => {
                                g.normalize(y, NormMode::BatchTrain, gamma, beta)?
                            }
                            (Norm::Batch, Some((rm, rv))) => {
                                let mean = self.store.get(rm).value.data();
                                let var = self.store.get(rv).value.data();
                                g.normalize(y, NormMode::BatchEval { mean, var }, gamma, beta)?
                            }
                            (Norm::Batch, None) => unreachable!("batch norm always has running buffers"),
                        };
                        if let (Some(stats), Some(running)) = (stats, np.running) {
                            running_updates.push((running, stats));
                        }
                        y = out;
                    }
                    match act {
                        Some(a) => g.activation(y, *a)?,
                        None => y,
                    }
                }
                StepKind::MaxPool => g.maxpool2d(x)?,
                StepKind::Upsample => g.upsample_nearest(x)?,
                StepKind::Concat => g.concat_channels(x, slots[step.inputs[1]])?,
                StepKind::Dense { weight, bias } => {
                    let flat = g.reshape(x, &[batch, g.value(x).numel() / batch])?;
                    g.dense(flat, binding.var(*weight), binding.var(*bias))?
                }
                StepKind::Sample => {
                    let log_var = slots[step.inputs[1]];
                    sample_latent(g, x, log_var, mode.latent, mode.sampler.as_deref_mut())?
                }
                StepKind::Reshape => g.reshape(x, &step.shape.batched(batch))?,
                StepKind::Act(a) => g.activation(x, *a)?,
            };
            if g.shape(y) != step.shape.batched(batch).as_slice() {
                return Err(Error::dim(
                    "forward",
                    format!("{} produced {:?}, expected {}", step.label, g.shape(y), step.shape),
                ));
            }
            slots.push(y);
        }
        for ((rm, rv), stats) in running_updates {
            let blend = |buf: &mut [f32], fresh: &[f32]| {
                for (r, &f) in buf.iter_mut().zip(fresh) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * f;
                }
            };
            blend(self.store.params_mut()[rm].value.data_mut(), &stats.mean);
            blend(self.store.params_mut()[rv].value.data_mut(), &stats.var);
        }
        let n_inputs = prog.inputs.len();
        let outputs = prog.outputs.iter().map(|&s| slots[s]).collect::<Vec<_>>();
        debug_assert!(prog.outputs.iter().all(|&s| s >= n_inputs));
        Ok(Pass { outputs, binding })
    }

    /// Convenience: evaluation-mode forward returning the first output's value.
    pub fn infer(&mut self, inputs: &[Tensor<f32>]) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let pass = self.forward(&mut g, &vars, &mut ForwardMode::eval())?;
        Ok(g.value(pass.output()).clone())
    }
}
