//! Command-line front end. Every command writes only under its output
//! directory; `ERRORNET_OUT` supplies the default.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::{load_models, run_bench, BenchConfig};
use crate::config::RunConfig;
use crate::data::io::{read_image, save_resized, unit_to_u8};
use crate::data::{
    binarize, count_samples, load_dataset, make_batch, materialize, Manifest, Sample, SynthDomain, PRESETS,
};
use crate::error::{Error, Result};
use crate::eval::{apply_correction, Pipeline, THRESHOLD};
use crate::nn::NetKind;
use crate::report::{evaluate_matrix, Variant};
use crate::train::{checkpoint_spec, load_network, train_stage, TrainData};

/// How signed error maps are stored in 8-bit PNGs.
pub const SIGNED_ENCODING: &str = "\
# Signed error map encoding
# Each pixel stores v in [-1, 1] as round((v + 1) / 2 * 255).
# Decode with v = 2 * p / 255 - 1. 0 -> -1, 128 -> +0.0039, 255 -> +1.
# Positive values add foreground, negative values remove it.
";

pub fn encode_signed(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0).round() as u8
}

pub fn decode_signed(p: u8) -> f32 {
    2.0 * p as f32 / 255.0 - 1.0
}

#[derive(Parser, Debug)]
#[command(
    name = "errornet",
    version,
    about = "Vessel segmentation with learned error correction"
)]
pub struct Cli {
    /// Output root.
    #[arg(long, global = true, env = "ERRORNET_OUT")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train one stage.
    Train(ConfigArgs),
    /// Score trained runs on every test domain.
    Eval(EvalArgs),
    /// Segment images with a trained run.
    Infer(InferArgs),
    /// Full desk-scale benchmark.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// One of chase-like, drive-like, stare-like, aria-like, hrf-like.
    #[arg(long, conflicts_with = "params")]
    pub preset: Option<String>,
    /// Generator parameters, or a manifest to replay.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(short = 'n', long, default_value_t = 28)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub stage: Option<String>,
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory of a trained run; repeat for several training domains.
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    /// Score only the uncorrected segmentation.
    #[arg(long)]
    pub no_correction: bool,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Directory of a trained run.
    #[arg(long)]
    pub run: PathBuf,
    /// Image file or directory of images.
    #[arg(long)]
    pub input: PathBuf,
    /// Also write the predicted error map and the corrected outputs.
    #[arg(long)]
    pub correct: bool,
    /// Model variant; defaults to errornet with --correct, base otherwise.
    #[arg(long)]
    pub variant: Option<String>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    pub seeds: Vec<u64>,
    /// Epochs of the seg, vae, err and joint stages.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    pub epochs: Option<Vec<usize>>,
}

fn out_root(cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out.clone().unwrap_or_else(|| RunConfig::default().out())
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Builds the effective config: defaults, then the output root, the file,
/// `--set` overrides and finally dedicated flags.
fn effective_config(args: &ConfigArgs, out: &Option<PathBuf>) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    if let Some(o) = out {
        c.set("out", &o.to_string_lossy())?;
    }
    if let Some(p) = &args.config {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        c.merge_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
    }
    for o in &args.overrides {
        c.apply(o)?;
    }
    if let Some(s) = &args.stage {
        c.set("stage", s)?;
    }
    if args.resume {
        c.set("resume", "true")?;
    }
    Ok(c)
}

pub fn cmd_synth(args: &SynthArgs, out: &Path) -> Result<Manifest> {
    let (domain, n, seed, res) = match (&args.preset, &args.params) {
        (Some(p), None) => {
            let d = SynthDomain::preset(p)
                .ok_or_else(|| Error::Usage(format!("unknown preset {p:?}; choose from {}", PRESETS.join(", "))))?;
            (d, args.count, args.seed, args.resolution)
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            if text.contains("[ids]") {
                let m = Manifest::from_text(&text)?;
                (m.domain, m.n, m.seed, m.resolution)
            } else {
                (SynthDomain::from_params(&text)?, args.count, args.seed, args.resolution)
            }
        }
        _ => return Err(Error::Usage("synth needs --preset or --params".into())),
    };
    let m = materialize(out, &domain, n, res, seed)?;
    println!("wrote {} samples to {}", m.n, out.join(&domain.name).display());
    Ok(m)
}

pub fn cmd_train(c: &RunConfig) -> Result<()> {
    let t = c.train_config()?;
    let root = c.data_root();
    let splits = load_dataset(&root, c.train_domain(), &c.split(), t.spec.resolution, c.split_seed())?;
    fs::create_dir_all(&t.dir).map_err(|e| Error::io(&t.dir, e))?;
    write(&t.dir.join(format!("{}.config.txt", t.output_name())), &c.to_text())?;
    let r = train_stage(
        &t,
        &TrainData {
            train: &splits.train,
            val: &splits.val,
        },
    )?;
    println!(
        "{}: {} epochs, {} steps, best validation {:.4} at epoch {}{}",
        t.output_name(),
        r.epochs_run,
        r.steps,
        r.best_metric,
        r.best_epoch,
        if r.halted { " (halted)" } else { "" }
    );
    Ok(())
}

/// The training config echoed into a run directory.
fn run_config(dir: &Path) -> Result<RunConfig> {
    let p = dir.join("seg.config.txt");
    if !p.exists() {
        return Err(Error::Config(format!(
            "{} is not a training run: missing {}",
            dir.display(),
            p.display()
        )));
    }
    RunConfig::load(&p)
}

pub fn cmd_eval(args: &EvalArgs, c: &RunConfig) -> Result<()> {
    let runs: Vec<(PathBuf, RunConfig)> = args
        .runs
        .iter()
        .map(|d| Ok((d.clone(), run_config(d)?)))
        .collect::<Result<_>>()?;
    let spec = runs[0].1.spec();
    if let Some((d, _)) = runs.iter().find(|(_, rc)| rc.spec() != spec) {
        return Err(Error::Config(format!("{} uses a different network spec", d.display())));
    }
    let mut models = Vec::new();
    let mut gaps = Vec::new();
    for (dir, rc) in &runs {
        let variants: Vec<Variant> = Variant::ALL
            .into_iter()
            .filter(|v| !args.no_correction || *v == Variant::BASE)
            .filter(|v| {
                let (s, e) = v.files();
                let present =
                    dir.join(format!("{s}.ckpt")).exists() && e.is_none_or(|e| dir.join(format!("{e}.ckpt")).exists());
                if !present {
                    gaps.push(format!("{}: {}", dir.display(), v.name()));
                }
                present
            })
            .collect();
        if !variants.contains(&Variant::BASE) {
            return Err(Error::Config(format!("{}: missing seg.ckpt", dir.display())));
        }
        models.extend(load_models(dir, &spec, rc.train_domain(), &variants)?);
    }
    let mut datasets = Vec::new();
    for d in c.test_domains() {
        let owner = runs.iter().find(|(_, rc)| rc.train_domain() == d);
        let (root, split, seed) = match owner {
            Some((_, rc)) => (rc.data_root(), rc.split(), rc.split_seed()),
            None => {
                let root = c.data_root();
                let n = count_samples(&root, &d)?;
                (root, c.test_split(n), c.split_seed())
            }
        };
        let s = load_dataset(&root, &d, &split, spec.resolution, seed)?;
        datasets.push((d, s.test));
    }
    let matrix = evaluate_matrix(&models, &datasets)?;
    let out = c.out();
    write(&out.join("eval.config.txt"), &c.to_text())?;
    write(&out.join("metrics.csv"), &matrix.to_csv())?;
    write(&out.join("metrics.md"), &matrix.to_markdown())?;
    print!("{}", matrix.to_markdown());
    for g in gaps {
        eprintln!("skipped {g}: checkpoint not found");
    }
    Ok(())
}

fn images_in(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let rd = fs::read_dir(input).map_err(|e| Error::io(input, e))?;
    let mut v: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| ["png", "pgm", "ppm", "pnm"].contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    v.sort();
    if v.is_empty() {
        return Err(Error::Data(format!("no images in {}", input.display())));
    }
    Ok(v)
}

pub fn cmd_infer(args: &InferArgs, out: &Path) -> Result<()> {
    let variant = match &args.variant {
        Some(v) => Variant::from_name(v).ok_or_else(|| Error::Usage(format!("unknown variant {v:?}")))?,
        None if args.correct => Variant::JOINT,
        None => Variant::BASE,
    };
    if args.correct && !variant.err_pred {
        return Err(Error::Usage(format!(
            "--correct needs a variant with a predictor, not {}",
            variant.name()
        )));
    }
    let (seg_file, err_file) = variant.files();
    let spec = checkpoint_spec(&args.run, seg_file)?;
    let seg = load_network(&args.run, seg_file, NetKind::Segmentation, &spec)?;
    let err = match (args.correct, err_file) {
        (true, Some(f)) => Some(load_network(&args.run, f, NetKind::Prediction, &spec)?),
        _ => None,
    };
    let mut p = Pipeline::new(seg, err)?;
    let res = spec.resolution;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    if args.correct {
        write(&out.join("error_encoding.txt"), SIGNED_ENCODING)?;
    }
    let mask_u8 = |v: f32| if v >= THRESHOLD { 255 } else { 0 };
    for path in images_in(&args.input)? {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        let (img, fov, dims) = read_image(&path, res)?;
        let sample = Sample::new(img, fov.map(|_| 0.0), fov, "infer", &stem)?;
        let batch = make_batch(&[&sample])?;
        let s = p.segment(&batch.images)?;
        let save = |suffix: &str, data: &[f32], enc: &dyn Fn(f32) -> u8| {
            save_resized(&out.join(format!("{stem}_{suffix}.png")), data, res, dims, enc)
        };
        save("prob", s.data(), &unit_to_u8)?;
        save("mask", s.data(), &mask_u8)?;
        if args.correct {
            let e = p.predict_error(&batch.images, &s)?;
            let corrected = apply_correction(&s, &e)?;
            save("error", e.data(), &encode_signed)?;
            save("corrected_prob", corrected.data(), &unit_to_u8)?;
            save("corrected_mask", corrected.data(), &mask_u8)?;
            let changed = binarize(&s, THRESHOLD)
                .data()
                .iter()
                .zip(binarize(&corrected, THRESHOLD).data())
                .filter(|(a, b)| a != b)
                .count();
            println!("{stem}: {changed} pixels changed by correction");
        } else {
            println!("{stem}: segmented");
        }
    }
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs, out: &Path) -> Result<()> {
    let mut cfg = BenchConfig::new(out);
    cfg.seeds = args.seeds.clone();
    if let Some(e) = &args.epochs {
        cfg.epochs = [e[0], e[1], e[2], e[3]];
    }
    let r = run_bench(&cfg, |m| eprintln!("{m}"))?;
    println!(
        "shifted gain {:+.2} Dice points, same-domain change {:+.2}, ablation ordered {}, break bridged in {}/{} seeds, {:.0} s",
        r.shifted_gain(),
        r.same_domain_change(),
        r.ablation_ordered().map_or("n/a".to_string(), |b| b.to_string()),
        r.runs.iter().filter(|s| s.gap.bridged()).count(),
        r.runs.len(),
        r.elapsed.as_secs_f64()
    );
    println!("report: {}", out.join("report.md").display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let out = out_root(&cli.out);
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, &out).map(drop),
        Command::Train(a) => cmd_train(&effective_config(a, &cli.out)?),
        Command::Eval(a) => cmd_eval(a, &effective_config(&a.config, &cli.out)?),
        Command::Infer(a) => cmd_infer(a, &out),
        Command::Bench(a) => cmd_bench(a, &out),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
