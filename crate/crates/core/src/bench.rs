//! Desk-scale cross-domain benchmark: synthesize every preset domain, train
//! the full pipeline on one of them for several seeds and score every model
//! variant on every domain.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::autograd::Tensor;
use crate::data::{
    binarize, load_dataset, make_batch, materialize, vessel_break, Sample, SplitSpec, SynthDomain, PRESETS,
};
use crate::error::{Error, Result};
use crate::eval::{connected_components, Pipeline, THRESHOLD};
use crate::nn::{NetKind, Network, NetworkSpec};
use crate::report::{evaluate_matrix, Metric, MetricsMatrix, Model, Variant};
use crate::train::{load_network, train_stage, Stage, TrainConfig, TrainData, TrainReport};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    /// Seed of the synthetic datasets and their splits.
    pub data_seed: u64,
    pub train_domain: String,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub spec: NetworkSpec,
    pub epochs: [usize; 4],
    pub batch_size: usize,
    pub lr: f32,
    pub joint_lr: f32,
    pub patience: usize,
    /// Also train the error predictor without error injection.
    pub ablation: bool,
    /// Length of the gap cut into the crafted case, pixels.
    pub gap_px: f32,
}

impl BenchConfig {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            seeds: vec![1, 2, 3],
            data_seed: 7,
            train_domain: "chase-like".into(),
            n_train: 24,
            n_val: 4,
            n_test: 20,
            spec: NetworkSpec::desk(),
            epochs: [40, 40, 40, 20],
            batch_size: 2,
            lr: 2e-3,
            joint_lr: 5e-4,
            patience: 10,
            ablation: true,
            gap_px: 3.0,
        }
    }

    fn epochs(&self, stage: Stage) -> usize {
        self.epochs[stage.tag() as usize]
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }

    /// Training settings of one stage for one seed.
    pub fn train_config(&self, stage: Stage, seed: u64, inject: bool) -> TrainConfig {
        let mut t = TrainConfig::new(stage, self.spec.clone(), self.seed_dir(seed));
        t.epochs = self.epochs(stage);
        t.batch_size = self.batch_size;
        t.lr = if stage == Stage::Joint { self.joint_lr } else { self.lr };
        t.seed = seed;
        t.patience = self.patience;
        let r = self.spec.resolution as f64;
        t.kl_weight = 1.0 / (r * r);
        t.inject = inject;
        t
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        let _ = writeln!(s, "data_seed = {}", self.data_seed);
        let _ = writeln!(s, "train_domain = {}", self.train_domain);
        let _ = writeln!(s, "split = {},{},{}", self.n_train, self.n_val, self.n_test);
        let _ = writeln!(
            s,
            "spec = {} / {} / {}",
            self.spec.resolution, self.spec.base_width, self.spec.width_scale
        );
        let _ = writeln!(s, "epochs = {:?}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "joint_lr = {}", self.joint_lr);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "ablation = {}", self.ablation);
        let _ = writeln!(s, "gap_px = {}", self.gap_px);
        s
    }
}

/// Component counts on the crafted break case: the base segmentation of an
/// intact vessel with a gap cut into it, and its correction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GapCheck {
    pub truth: usize,
    pub base: usize,
    pub cut: usize,
    pub corrected: usize,
    /// Same counts within a window around the cut.
    pub base_local: usize,
    pub cut_local: usize,
    pub corrected_local: usize,
}

impl GapCheck {
    pub fn bridged(&self) -> bool {
        self.corrected < self.cut
    }

    /// The cut actually split the base segmentation.
    pub fn cut_splits(&self) -> bool {
        self.cut_local > self.base_local
    }
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub matrix: MetricsMatrix,
    pub training: Vec<TrainReport>,
    pub gap: GapCheck,
}

/// Per-variant summary over seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariantSummary {
    pub variant: Variant,
    pub shifted_dice: f64,
    pub same_dice: f64,
    pub shifted_iou: f64,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub runs: Vec<SeedRun>,
    pub summary: Vec<VariantSummary>,
    pub elapsed: Duration,
}

impl BenchReport {
    pub fn variant(&self, v: Variant) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == v)
    }

    /// ErrorNet minus base, shifted-domain mean Dice, in Dice points.
    pub fn shifted_gain(&self) -> f64 {
        100.0 * (self.variant(Variant::JOINT).map_or(f64::NAN, |s| s.shifted_dice) - self.base().shifted_dice)
    }

    /// ErrorNet minus base, same-domain Dice, in Dice points.
    pub fn same_domain_change(&self) -> f64 {
        100.0 * (self.variant(Variant::JOINT).map_or(f64::NAN, |s| s.same_dice) - self.base().same_dice)
    }

    fn base(&self) -> &VariantSummary {
        self.variant(Variant::BASE).expect("every bench scores the base model")
    }

    /// err-pred <= +vae <= +joint on the shifted-domain mean.
    pub fn ablation_ordered(&self) -> Option<bool> {
        let e = self.variant(Variant::ERR_PRED)?.shifted_dice;
        let v = self.variant(Variant::WITH_VAE)?.shifted_dice;
        let j = self.variant(Variant::JOINT)?.shifted_dice;
        Some(e <= v && v <= j)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# Desk benchmark\n\n");
        s.push_str("Mean over seeds, Dice in percent.\n\n");
        s.push_str("| model | shifted Dice | same-domain Dice | shifted IoU |\n");
        s.push_str("| ----- | -----------: | ---------------: | ----------: |\n");
        for v in &self.summary {
            let _ = writeln!(
                s,
                "| {} | {:.1} | {:.1} | {:.1} |",
                v.variant.name(),
                100.0 * v.shifted_dice,
                100.0 * v.same_dice,
                100.0 * v.shifted_iou
            );
        }
        let _ = writeln!(s, "\nshifted gain: {:+.2} Dice points", self.shifted_gain());
        let _ = writeln!(s, "same-domain change: {:+.2} Dice points", self.same_domain_change());
        if let Some(o) = self.ablation_ordered() {
            let _ = writeln!(s, "ablation ordered: {o}");
        }
        s.push_str("\n## Vessel break\n\nForeground components of the base mask, the same with a gap cut across one vessel, and its correction.\n\n");
        s.push_str("| seed | truth | base | cut | corrected | local base | local cut | local corrected |\n");
        s.push_str("| ---: | ---: | ---: | ---: | ---: | ---: | ---: | ---: |\n");
        for r in &self.runs {
            let g = r.gap;
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                r.seed, g.truth, g.base, g.cut, g.corrected, g.base_local, g.cut_local, g.corrected_local
            );
        }
        for r in &self.runs {
            let _ = write!(s, "\n## Seed {}\n\n{}", r.seed, r.matrix.to_markdown());
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,");
        let runs = &self.runs;
        let Some(first) = runs.first() else { return s };
        let header = first.matrix.to_csv();
        let mut lines = header.lines();
        let _ = writeln!(s, "{}", lines.next().unwrap_or(""));
        for r in runs {
            for line in r.matrix.to_csv().lines().skip(1) {
                let _ = writeln!(s, "{},{line}", r.seed);
            }
        }
        s
    }
}

/// Materializes the synthetic domains under `<out>/data` and loads their
/// splits. Returns the training domain's train/val and every test split.
pub fn prepare_data(cfg: &BenchConfig) -> Result<(Vec<Sample>, Vec<Sample>, Vec<(String, Vec<Sample>)>)> {
    let root = cfg.out.join("data");
    let res = cfg.spec.resolution;
    let mut tests = Vec::new();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for name in PRESETS {
        let domain = SynthDomain::preset(name).expect("built-in preset");
        let split = if *name == cfg.train_domain {
            SplitSpec::new(cfg.n_train, cfg.n_val, cfg.n_test)
        } else {
            SplitSpec::new(0, 0, cfg.n_test)
        };
        let dir = root.join(name);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        materialize(&root, &domain, split.total(), res, cfg.data_seed)?;
        let s = load_dataset(&root, name, &split, res, cfg.data_seed)?;
        if *name == cfg.train_domain {
            train = s.train;
            val = s.val;
        }
        tests.push((name.to_string(), s.test));
    }
    if train.is_empty() {
        return Err(Error::Config(format!("{} is not a synthetic preset", cfg.train_domain)));
    }
    Ok((train, val, tests))
}

/// Loads the networks of every variant trained under `dir`.
pub fn load_models(dir: &Path, spec: &NetworkSpec, train_domain: &str, variants: &[Variant]) -> Result<Vec<Model>> {
    variants
        .iter()
        .map(|&v| {
            let (seg_file, err_file) = v.files();
            Ok(Model {
                train: train_domain.to_string(),
                variant: v,
                seg: load_network(dir, seg_file, NetKind::Segmentation, spec)?,
                err: err_file
                    .map(|f| load_network(dir, f, NetKind::Prediction, spec))
                    .transpose()?,
            })
        })
        .collect()
}

fn window(mask: &[f32], w: usize, centre: (f32, f32), half: usize) -> (Vec<f32>, usize) {
    let h = mask.len() / w;
    let cx = centre.0.round().clamp(0.0, (w - 1) as f32) as usize;
    let cy = centre.1.round().clamp(0.0, (h - 1) as f32) as usize;
    let (x0, x1) = (cx.saturating_sub(half), (cx + half + 1).min(w));
    let (y0, y1) = (cy.saturating_sub(half), (cy + half + 1).min(h));
    let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
    for y in y0..y1 {
        out.extend_from_slice(&mask[y * w + x0..y * w + x1]);
    }
    (out, x1 - x0)
}

/// Scores the crafted break case with a corrected pipeline.
pub fn gap_check(seg: &Network, err: &Network, domain: &SynthDomain, data_seed: u64, gap_px: f32) -> Result<GapCheck> {
    let res = seg.spec().resolution;
    let crafted = vessel_break(domain, res, data_seed)?;
    let s = &crafted.sample;
    let mut p = Pipeline::new(seg.clone(), Some(err.clone()))?;
    let batch = make_batch(&[s])?;
    let base = p.segment(&batch.images)?;
    let cut = crafted.cut(&base, gap_px)?;
    let corrected = p.correct(&batch.images, &cut)?;
    let in_fov = |t: &Tensor<f32>| -> Vec<f32> {
        binarize(t, THRESHOLD)
            .data()
            .iter()
            .zip(s.fov.data())
            .map(|(a, f)| a * f)
            .collect()
    };
    let maps = [in_fov(&s.mask), in_fov(&base), in_fov(&cut), in_fov(&corrected)];
    let half = (crafted.radius + gap_px).ceil() as usize + 2;
    let local = |m: &[f32]| {
        let (win, ww) = window(m, res, crafted.centre, half);
        connected_components(&win, ww)
    };
    Ok(GapCheck {
        truth: connected_components(&maps[0], res),
        base: connected_components(&maps[1], res),
        cut: connected_components(&maps[2], res),
        corrected: connected_components(&maps[3], res),
        base_local: local(&maps[1]),
        cut_local: local(&maps[2]),
        corrected_local: local(&maps[3]),
    })
}

/// Trains and scores one seed under `<out>/seed-<seed>`.
pub fn run_seed(
    cfg: &BenchConfig,
    seed: u64,
    train: &[Sample],
    val: &[Sample],
    tests: &[(String, Vec<Sample>)],
) -> Result<SeedRun> {
    let data = TrainData { train, val };
    let mut plan = vec![(Stage::Seg, true), (Stage::Vae, true), (Stage::Err, true)];
    if cfg.ablation {
        plan.push((Stage::Err, false));
    }
    plan.push((Stage::Joint, true));
    let mut training = Vec::new();
    for (stage, inject) in plan {
        training.push(train_stage(&cfg.train_config(stage, seed, inject), &data)?);
    }
    let dir = cfg.seed_dir(seed);
    let variants: Vec<Variant> = Variant::ALL
        .into_iter()
        .filter(|v| cfg.ablation || *v != Variant::ERR_PRED)
        .collect();
    let models = load_models(&dir, &cfg.spec, &cfg.train_domain, &variants)?;
    let matrix = evaluate_matrix(&models, tests)?;
    fs::write(dir.join("metrics.csv"), matrix.to_csv()).map_err(|e| Error::io(&dir, e))?;
    fs::write(dir.join("metrics.md"), matrix.to_markdown()).map_err(|e| Error::io(&dir, e))?;
    let joint = models
        .iter()
        .find(|m| m.variant == Variant::JOINT)
        .expect("joint is always scored");
    let domain = SynthDomain::preset(&cfg.train_domain).expect("checked by prepare_data");
    let gap = gap_check(
        &joint.seg,
        joint.err.as_ref().expect("joint has a predictor"),
        &domain,
        cfg.data_seed,
        cfg.gap_px,
    )?;
    Ok(SeedRun {
        seed,
        matrix,
        training,
        gap,
    })
}

pub fn summarize(runs: &[SeedRun]) -> Vec<VariantSummary> {
    let Some(first) = runs.first() else { return Vec::new() };
    first
        .matrix
        .rows
        .iter()
        .map(|r| {
            let (mut sd, mut same, mut si) = (0.0, 0.0, 0.0);
            for run in runs {
                let m = &run.matrix;
                let i = m.find(&r.train, r.variant).expect("every seed scores the same rows");
                sd += m.shifted_average(i, Metric::Dice);
                same += m.same_domain(i, Metric::Dice).unwrap_or(f64::NAN);
                si += m.shifted_average(i, Metric::Iou);
            }
            let n = runs.len() as f64;
            VariantSummary {
                variant: r.variant,
                shifted_dice: sd / n,
                same_dice: same / n,
                shifted_iou: si / n,
            }
        })
        .collect()
}

/// Runs the whole benchmark. `report.md`, `report.csv` and `bench.config.txt`
/// are deterministic; wall time goes to `timing.txt`.
pub fn run_bench(cfg: &BenchConfig, mut progress: impl FnMut(&str)) -> Result<BenchReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("bench needs at least one seed".into()));
    }
    let t0 = Instant::now();
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let echo = cfg.out.join("bench.config.txt");
    fs::write(&echo, cfg.to_text()).map_err(|e| Error::io(&echo, e))?;
    progress("generating synthetic domains");
    let (train, val, tests) = prepare_data(cfg)?;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        progress(&format!("seed {seed}: training seg, vae, err, joint"));
        runs.push(run_seed(cfg, seed, &train, &val, &tests)?);
    }
    let report = BenchReport {
        summary: summarize(&runs),
        runs,
        elapsed: t0.elapsed(),
    };
    let write = |name: &str, text: String| {
        let p = cfg.out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("report.md", report.to_markdown())?;
    write("report.csv", report.to_csv())?;
    write(
        "timing.txt",
        format!("total_seconds = {:.1}\n", report.elapsed.as_secs_f64()),
    )?;
    Ok(report)
}
