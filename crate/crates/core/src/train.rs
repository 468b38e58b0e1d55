//! Stage-wise and joint training. Each stage writes `<name>.ckpt` (best
//! validation epoch), `<name>.last.ckpt` (resume point) and `<name>.log.csv`
//! into the checkpoint directory.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Adam, Graph, Tensor};
use crate::checkpoint::{Checkpoint, RngState, Selection, FLAG_NO_INJECTION};
use crate::data::{make_batch, Batch, Sample};
use crate::error::{Error, Result};
use crate::eval::Pipeline;
use crate::loss::{err_pred_loss, err_target, seg_loss, vae_loss, Loss, LossValue, TargetMode};
use crate::nn::{ForwardMode, LatentMode, LatentSampler, NetKind, Network, NetworkSpec, INJECT_VARIANCE};

pub const LOG_HEADER: &str = "step,stage,loss,loss_seg,loss_recon,loss_kl,loss_pred,val_metric";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Seg,
    Vae,
    Err,
    Joint,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Seg, Stage::Vae, Stage::Err, Stage::Joint];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Seg => "seg",
            Stage::Vae => "vae",
            Stage::Err => "err",
            Stage::Joint => "joint",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_tag(t: u8) -> Option<Self> {
        Self::ALL.get(t as usize).copied()
    }

    /// Networks whose weights are held fixed during this stage.
    pub fn frozen(self) -> &'static [NetKind] {
        match self {
            Stage::Seg => &[],
            Stage::Vae => &[NetKind::Segmentation],
            Stage::Err => &[NetKind::Segmentation, NetKind::Injection],
            Stage::Joint => &[NetKind::Injection],
        }
    }

    pub fn trained(self) -> &'static [NetKind] {
        match self {
            Stage::Seg => &[NetKind::Segmentation],
            Stage::Vae => &[NetKind::Injection],
            Stage::Err => &[NetKind::Prediction],
            Stage::Joint => &[NetKind::Segmentation, NetKind::Prediction],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("stage must be one of seg, vae, err, joint; got {s:?}")))
    }
}

/// What the predictor sees as its segmentation input during joint training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointInput {
    /// The injected `S_hat`, as in stage-wise training.
    Injected,
    /// The live segmentation `S`, as at inference. Lets the predictor loss
    /// reach the segmentation network.
    Raw,
}

impl FromStr for JointInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "injected" => Ok(JointInput::Injected),
            "raw" => Ok(JointInput::Raw),
            _ => Err(Error::Config(format!("joint_input must be injected or raw, got {s:?}"))),
        }
    }
}

impl fmt::Display for JointInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JointInput::Injected => "injected",
            JointInput::Raw => "raw",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub spec: NetworkSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub kl_weight: f64,
    pub inject_variance: f64,
    pub target: TargetMode,
    pub joint_input: JointInput,
    pub seg_weight: f64,
    pub pred_weight: f64,
    /// Error stage only: degrade `S` through the VAE. Without injection the
    /// predictor learns from the raw segmentation and the stage is saved as
    /// `err_novae`.
    pub inject: bool,
    pub dir: PathBuf,
    /// Stop after this many optimizer steps, as if interrupted.
    pub halt_after: Option<u64>,
    /// Continue from `<name>.last.ckpt` when it exists.
    pub resume: bool,
}

impl TrainConfig {
    pub fn new(stage: Stage, spec: NetworkSpec, dir: impl Into<PathBuf>) -> Self {
        Self {
            stage,
            spec,
            epochs: 30,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            patience: 10,
            kl_weight: 1.0,
            inject_variance: INJECT_VARIANCE,
            target: TargetMode::Signed,
            joint_input: JointInput::Raw,
            seg_weight: 1.0,
            pred_weight: 1.0,
            inject: true,
            dir: dir.into(),
            halt_after: None,
            resume: false,
        }
    }

    /// File stem of this stage's outputs.
    pub fn output_name(&self) -> &'static str {
        match (self.stage, self.inject) {
            (Stage::Err, false) => "err_novae",
            (s, _) => s.name(),
        }
    }

    pub fn best_path(&self) -> PathBuf {
        self.dir.join(format!("{}.ckpt", self.output_name()))
    }

    pub fn last_path(&self) -> PathBuf {
        self.dir.join(format!("{}.last.ckpt", self.output_name()))
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join(format!("{}.log.csv", self.output_name()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.kl_weight >= 0.0 && self.inject_variance >= 0.0) {
            return Err(Error::Config(
                "kl_weight and inject_variance must be non-negative".into(),
            ));
        }
        for k in [NetKind::Segmentation, NetKind::Injection, NetKind::Prediction] {
            self.spec.validate(k)?;
        }
        Ok(())
    }
}

/// One CSV row. Components that a stage does not have stay empty.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub stage: Stage,
    pub loss: LossValue,
    pub val_metric: Option<f64>,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        format!(
            "{},{},{:e},{},{},{},{},{}",
            self.step,
            self.stage,
            self.loss.scalar,
            opt(self.loss.component("seg")),
            opt(self.loss.component("recon")),
            opt(self.loss.component("kl")),
            opt(self.loss.component("pred")),
            opt(self.val_metric),
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub stage: Stage,
    /// Best validation metric: Dice, or the stage loss for vae.
    pub best_metric: f64,
    pub best_epoch: u32,
    pub epochs_run: u32,
    pub steps: u64,
    pub halted: bool,
    pub rows: Vec<LogRow>,
    /// Parameter fingerprints of each frozen network before and after.
    pub frozen: Vec<(NetKind, u64, u64)>,
}

pub struct TrainData<'a> {
    pub train: &'a [Sample],
    pub val: &'a [Sample],
}

fn stage_checkpoint(dir: &Path, file: &str) -> Result<Checkpoint> {
    let path = dir.join(format!("{file}.ckpt"));
    if !path.exists() {
        let stage = match file {
            "err_novae" => "err with inject=false".to_string(),
            f => f.to_string(),
        };
        return Err(Error::Config(format!(
            "missing {} (run stage {stage} first)",
            path.display()
        )));
    }
    Checkpoint::load(&path)
}

/// Network spec a stage checkpoint in `dir` was trained with.
pub fn checkpoint_spec(dir: &Path, file: &str) -> Result<NetworkSpec> {
    stage_checkpoint(dir, file).map(|c| c.spec)
}

/// Loads one network from a stage checkpoint in `dir`.
pub fn load_network(dir: &Path, file: &str, kind: NetKind, spec: &NetworkSpec) -> Result<Network> {
    let ck = stage_checkpoint(dir, file)?;
    let path = dir.join(format!("{file}.ckpt"));
    if &ck.spec != spec {
        return Err(Error::Config(format!(
            "{} was trained with {:?}, current spec is {:?}",
            path.display(),
            ck.spec,
            spec
        )));
    }
    let store = ck
        .net(kind)
        .ok_or_else(|| Error::Config(format!("{} holds no {} network", path.display(), kind)))?
        .clone();
    Network::from_store(kind, spec, store)
}

struct Nets {
    seg: Network,
    vae: Option<Network>,
    err: Option<Network>,
}

impl Nets {
    fn get(&self, kind: NetKind) -> Option<&Network> {
        match kind {
            NetKind::Segmentation => Some(&self.seg),
            NetKind::Injection => self.vae.as_ref(),
            NetKind::Prediction => self.err.as_ref(),
        }
    }
}

fn salt(seed: u64, what: u64) -> u64 {
    seed ^ what.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Trains one stage and returns a summary; the best checkpoint is on disk.
pub fn train_stage(cfg: &TrainConfig, data: &TrainData<'_>) -> Result<TrainReport> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Config(
            "training needs non-empty train and validation sets".into(),
        ));
    }
    fs::create_dir_all(&cfg.dir).map_err(|e| Error::io(&cfg.dir, e))?;
    let spec = &cfg.spec;
    let stage_salt = 1 + cfg.stage.tag() as u64 + if cfg.inject { 0 } else { 16 };

    let fresh_seg = || Network::build(NetKind::Segmentation, spec, cfg.seed);
    let mut nets = match cfg.stage {
        Stage::Seg => Nets {
            seg: fresh_seg()?,
            vae: None,
            err: None,
        },
        Stage::Vae => Nets {
            seg: load_network(&cfg.dir, "seg", NetKind::Segmentation, spec)?,
            vae: Some(Network::build(NetKind::Injection, spec, cfg.seed)?),
            err: None,
        },
        Stage::Err => Nets {
            seg: load_network(&cfg.dir, "seg", NetKind::Segmentation, spec)?,
            vae: if cfg.inject {
                Some(load_network(&cfg.dir, "vae", NetKind::Injection, spec)?)
            } else {
                None
            },
            err: Some(Network::build(NetKind::Prediction, spec, cfg.seed)?),
        },
        Stage::Joint => {
            let mut seg = load_network(&cfg.dir, "seg", NetKind::Segmentation, spec)?;
            let vae = load_network(&cfg.dir, "vae", NetKind::Injection, spec)?;
            let mut err = load_network(&cfg.dir, "err", NetKind::Prediction, spec)?;
            seg.store_mut().reset_optimizer();
            err.store_mut().reset_optimizer();
            Nets {
                seg,
                vae: Some(vae),
                err: Some(err),
            }
        }
    };
    for k in cfg.stage.frozen() {
        match k {
            NetKind::Segmentation => nets.seg.set_frozen(true),
            NetKind::Injection => {
                if let Some(v) = nets.vae.as_mut() {
                    v.set_frozen(true);
                }
            }
            NetKind::Prediction => unreachable!("no stage freezes the predictor"),
        }
    }

    let frozen_before: Vec<(NetKind, u64)> = cfg
        .stage
        .frozen()
        .iter()
        .filter_map(|&k| nets.get(k).map(|n| (k, n.store().fingerprint())))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(salt(cfg.seed, stage_salt));
    let mut sampler = LatentSampler::new(salt(cfg.seed, stage_salt + 100));
    let mut epoch = 0u32;
    let mut step = 0u64;
    let mut sel = Selection {
        best: f64::NAN,
        best_epoch: 0,
        stale: 0,
    };
    let mut rows: Vec<LogRow> = Vec::new();

    let last = cfg.last_path();
    if cfg.resume && last.exists() {
        let ck = Checkpoint::load(&last)?;
        if ck.stage != cfg.stage || &ck.spec != spec {
            return Err(Error::Config(format!("{} belongs to a different run", last.display())));
        }
        for (kind, store) in &ck.nets {
            let net = Network::from_store(*kind, spec, store.clone())?;
            match kind {
                NetKind::Segmentation => nets.seg = net,
                NetKind::Injection => nets.vae = Some(net),
                NetKind::Prediction => nets.err = Some(net),
            }
        }
        rng = ck.rng.restore();
        sampler = ck.latent_sampler();
        epoch = ck.epoch;
        step = ck.step;
        sel = ck.selection.clone();
        rows = read_log(&cfg.log_path(), cfg.stage)?
            .into_iter()
            .filter(|r| r.step <= step)
            .collect();
    }
    write_log(&cfg.log_path(), &rows)?;

    let opt = Adam::with_lr(cfg.lr);
    let higher_is_better = cfg.stage != Stage::Vae;
    let mut halted = false;
    let n = data.train.len();
    'epochs: while (epoch as usize) < cfg.epochs {
        if sel.stale as usize >= cfg.patience && epoch > 0 {
            break;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut epoch_rows = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.halt_after == Some(step) {
                halted = true;
                break 'epochs;
            }
            let batch = make_batch(&chunk.iter().map(|&i| &data.train[i]).collect::<Vec<_>>())?;
            let loss = train_step(cfg, &mut nets, &batch, &mut sampler, &opt).and_then(|l| {
                if l.scalar.is_finite() {
                    Ok(l)
                } else {
                    Err(Error::Numerical(format!("loss is {}", l.scalar)))
                }
            });
            let loss = loss.map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("{} stage, step {}: {m}", cfg.stage, step + 1)),
                other => other,
            })?;
            step += 1;
            epoch_rows.push(LogRow {
                step,
                stage: cfg.stage,
                loss,
                val_metric: None,
            });
        }
        let metric = validate(cfg, &mut nets, data.val)?;
        if let Some(r) = epoch_rows.last_mut() {
            r.val_metric = Some(metric);
        }
        epoch += 1;
        let improved = sel.best.is_nan()
            || if higher_is_better {
                metric > sel.best
            } else {
                metric < sel.best
            };
        if improved {
            sel.best = metric;
            sel.best_epoch = epoch;
            sel.stale = 0;
        } else {
            sel.stale += 1;
        }
        let ck = snapshot(cfg, &nets, epoch, step, &rng, &sampler, &sel);
        if improved {
            ck.save(&cfg.best_path())?;
        }
        ck.save(&last)?;
        append_log(&cfg.log_path(), &epoch_rows)?;
        rows.extend(epoch_rows);
    }
    Ok(TrainReport {
        stage: cfg.stage,
        best_metric: sel.best,
        best_epoch: sel.best_epoch,
        epochs_run: epoch,
        steps: step,
        halted,
        rows,
        frozen: frozen_before
            .into_iter()
            .map(|(k, h)| {
                (
                    k,
                    h,
                    nets.get(k).expect("frozen network stays loaded").store().fingerprint(),
                )
            })
            .collect(),
    })
}

fn snapshot(
    cfg: &TrainConfig,
    nets: &Nets,
    epoch: u32,
    step: u64,
    rng: &ChaCha8Rng,
    sampler: &LatentSampler,
    sel: &Selection,
) -> Checkpoint {
    Checkpoint {
        stage: cfg.stage,
        flags: if cfg.inject { 0 } else { FLAG_NO_INJECTION },
        epoch,
        step,
        spec: cfg.spec.clone(),
        rng: RngState::capture(rng),
        latent_rng: RngState::capture(sampler.rng()),
        latent_draws: sampler.draws(),
        selection: sel.clone(),
        nets: cfg
            .stage
            .trained()
            .iter()
            .map(|&k| (k, nets.get(k).expect("trained network is loaded").store().clone()))
            .collect(),
    }
}

/// Weighted sum that keeps the weighted parts, so parts still add up.
fn weighted(g: &mut Graph<f32>, loss: Loss, w: f64) -> Result<Loss> {
    if w == 1.0 {
        return Ok(loss);
    }
    let total = g.scale(loss.total, w)?;
    let mut parts = Vec::with_capacity(loss.parts.len());
    for (name, v) in loss.parts {
        parts.push((name, g.scale(v, w)?));
    }
    Ok(Loss { total, parts })
}

/// Foreground channel of an injected reconstruction of `s`.
fn inject(vae: &mut Network, s: &Tensor<f32>, sampler: &mut LatentSampler, variance: f64) -> Result<Tensor<f32>> {
    let mut g = Graph::new();
    let sv = g.constant(s.clone());
    let mut mode = ForwardMode {
        train: false,
        latent: LatentMode::Inject { variance },
        sampler: Some(sampler),
    };
    let pass = vae.forward(&mut g, &[sv], &mut mode)?;
    let fg = g.slice_channels(pass.outputs[0], 1, 1)?;
    Ok(g.value(fg).clone())
}

fn frozen_segment(seg: &mut Network, images: &Tensor<f32>) -> Result<Tensor<f32>> {
    seg.infer(&[images.clone()])
}

fn train_step(
    cfg: &TrainConfig,
    nets: &mut Nets,
    batch: &Batch,
    sampler: &mut LatentSampler,
    opt: &Adam,
) -> Result<LossValue> {
    let mut g = Graph::new();
    match cfg.stage {
        Stage::Seg => {
            let x = g.constant(batch.images.clone());
            let pass = nets.seg.forward(&mut g, &[x], &mut ForwardMode::train())?;
            let loss = seg_loss(&mut g, pass.output(), &batch.masks, &batch.fovs)?;
            g.backward(loss.total)?;
            nets.seg.collect_grads(&g, &pass);
            nets.seg.store_mut().adam_step(opt)?;
            Ok(loss.value(&g))
        }
        Stage::Vae => {
            let s = frozen_segment(&mut nets.seg, &batch.images)?;
            let vae = nets.vae.as_mut().expect("vae stage");
            let sv = g.constant(s.clone());
            let mut mode = ForwardMode {
                train: true,
                latent: LatentMode::Train,
                sampler: Some(sampler),
            };
            let pass = vae.forward(&mut g, &[sv], &mut mode)?;
            let loss = vae_loss(
                &mut g,
                pass.outputs[0],
                &s,
                pass.outputs[1],
                pass.outputs[2],
                cfg.kl_weight,
            )?;
            g.backward(loss.total)?;
            vae.collect_grads(&g, &pass);
            vae.store_mut().adam_step(opt)?;
            Ok(loss.value(&g))
        }
        Stage::Err => {
            let s = frozen_segment(&mut nets.seg, &batch.images)?;
            let s_hat = match nets.vae.as_mut() {
                Some(vae) => inject(vae, &s, sampler, cfg.inject_variance)?,
                None => s,
            };
            let target = err_target(&s_hat, &batch.masks, cfg.target)?;
            let err = nets.err.as_mut().expect("err stage");
            let x = g.constant(batch.images.clone());
            let sh = g.constant(s_hat);
            let pass = err.forward(&mut g, &[x, sh], &mut ForwardMode::train())?;
            let loss = err_pred_loss(&mut g, pass.output(), &target)?;
            g.backward(loss.total)?;
            err.collect_grads(&g, &pass);
            err.store_mut().adam_step(opt)?;
            Ok(loss.value(&g))
        }
        Stage::Joint => {
            let x = g.constant(batch.images.clone());
            let s_pass = nets.seg.forward(&mut g, &[x], &mut ForwardMode::train())?;
            let s = s_pass.output();
            let s_val = g.value(s).clone();
            let vae = nets.vae.as_mut().expect("joint stage");
            let s_hat = inject(vae, &s_val, sampler, cfg.inject_variance)?;
            let target = err_target(&s_hat, &batch.masks, cfg.target)?;
            let pred_in = match cfg.joint_input {
                JointInput::Raw => s,
                JointInput::Injected => g.constant(s_hat),
            };
            let err = nets.err.as_mut().expect("joint stage");
            let e_pass = err.forward(&mut g, &[x, pred_in], &mut ForwardMode::train())?;
            let pred = err_pred_loss(&mut g, e_pass.output(), &target)?;
            let pred = weighted(&mut g, pred, cfg.pred_weight)?;
            let segl = seg_loss(&mut g, s, &batch.masks, &batch.fovs)?;
            let segl = weighted(&mut g, segl, cfg.seg_weight)?;
            let loss = segl.plus(&mut g, pred)?;
            g.backward(loss.total)?;
            nets.seg.collect_grads(&g, &s_pass);
            err.collect_grads(&g, &e_pass);
            nets.seg.store_mut().adam_step(opt)?;
            err.store_mut().adam_step(opt)?;
            Ok(loss.value(&g))
        }
    }
}

fn validate(cfg: &TrainConfig, nets: &mut Nets, val: &[Sample]) -> Result<f64> {
    match cfg.stage {
        Stage::Seg => Pipeline::new(nets.seg.clone(), None)?.score(val, false).map(|s| s.dice),
        Stage::Err | Stage::Joint => {
            let err = nets.err.clone().expect("stage has a predictor");
            Pipeline::new(nets.seg.clone(), Some(err))?
                .score(val, true)
                .map(|s| s.dice)
        }
        Stage::Vae => {
            let mut total = 0.0;
            for chunk in val.chunks(cfg.batch_size) {
                let batch = make_batch(&chunk.iter().collect::<Vec<_>>())?;
                let s = frozen_segment(&mut nets.seg, &batch.images)?;
                let vae = nets.vae.as_mut().expect("vae stage");
                let mut g = Graph::new();
                let sv = g.constant(s.clone());
                let pass = vae.forward(&mut g, &[sv], &mut ForwardMode::eval())?;
                let l = vae_loss(
                    &mut g,
                    pass.outputs[0],
                    &s,
                    pass.outputs[1],
                    pass.outputs[2],
                    cfg.kl_weight,
                )?;
                total += l.value(&g).scalar * chunk.len() as f64;
            }
            Ok(total / val.len() as f64)
        }
    }
}

fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut text = String::from(LOG_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn append_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for r in rows {
        writeln!(f, "{}", r.to_csv()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Parses a training log written by this module.
pub fn read_log(path: &Path, stage: Stage) -> Result<Vec<LogRow>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let bad = |line: &str| Error::Data(format!("{}: malformed log row {line:?}", path.display()));
    let mut rows = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(line));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(line))
            }
        };
        let mut components = Vec::new();
        for (name, v) in ["seg", "recon", "kl", "pred"].into_iter().zip(&f[3..7]) {
            if let Some(x) = opt(v)? {
                components.push((name, x));
            }
        }
        rows.push(LogRow {
            step: f[0].parse().map_err(|_| bad(line))?,
            stage,
            loss: LossValue {
                scalar: f[2].parse().map_err(|_| bad(line))?,
                components,
            },
            val_metric: opt(f[7])?,
        });
    }
    Ok(rows)
}
