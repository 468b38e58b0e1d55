//! Cross-domain metric grids: rows are (train domain, model variant), columns
//! are test domains. Emitted as CSV (fractions, full precision) and Markdown
//! (percent, one decimal).

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::eval::{Pipeline, Scores};
use crate::nn::Network;

/// Which parts of the correction pipeline a model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Variant {
    pub err_pred: bool,
    pub vae: bool,
    pub joint: bool,
}

impl Variant {
    pub const BASE: Variant = Variant::new(false, false, false);
    pub const ERR_PRED: Variant = Variant::new(true, false, false);
    pub const WITH_VAE: Variant = Variant::new(true, true, false);
    pub const JOINT: Variant = Variant::new(true, true, true);
    pub const ALL: [Variant; 4] = [Variant::BASE, Variant::ERR_PRED, Variant::WITH_VAE, Variant::JOINT];

    pub const fn new(err_pred: bool, vae: bool, joint: bool) -> Self {
        Self { err_pred, vae, joint }
    }

    pub fn name(self) -> &'static str {
        match (self.err_pred, self.vae, self.joint) {
            (false, _, _) => "base",
            (true, false, false) => "err-pred",
            (true, true, false) => "err-pred+vae",
            (true, _, true) => "errornet",
        }
    }

    /// Checkpoint files `(segmentation, predictor)` this variant is built from.
    pub fn files(self) -> (&'static str, Option<&'static str>) {
        match (self.err_pred, self.vae, self.joint) {
            (false, _, _) => ("seg", None),
            (true, false, false) => ("seg", Some("err_novae")),
            (true, true, false) => ("seg", Some("err")),
            (true, _, true) => ("joint", Some("joint")),
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixRow {
    pub train: String,
    pub variant: Variant,
    pub dice: Vec<f64>,
    pub iou: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Dice,
    Iou,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Dice => "dice",
            Metric::Iou => "iou",
        }
    }
}

impl MatrixRow {
    pub fn values(&self, m: Metric) -> &[f64] {
        match m {
            Metric::Dice => &self.dice,
            Metric::Iou => &self.iou,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsMatrix {
    pub test_domains: Vec<String>,
    pub rows: Vec<MatrixRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

impl MetricsMatrix {
    /// Column of the same-domain cell of `row`, if its train domain was tested.
    pub fn diagonal(&self, row: usize) -> Option<usize> {
        let t = &self.rows[row].train;
        self.test_domains.iter().position(|d| d == t)
    }

    /// Mean over every test domain.
    pub fn row_average(&self, row: usize, m: Metric) -> f64 {
        mean(self.rows[row].values(m).iter().copied())
    }

    /// Mean over test domains other than the training one.
    pub fn shifted_average(&self, row: usize, m: Metric) -> f64 {
        let diag = self.diagonal(row);
        mean(
            self.rows[row]
                .values(m)
                .iter()
                .enumerate()
                .filter(|(j, _)| Some(*j) != diag)
                .map(|(_, &x)| x),
        )
    }

    pub fn same_domain(&self, row: usize, m: Metric) -> Option<f64> {
        self.diagonal(row).map(|j| self.rows[row].values(m)[j])
    }

    pub fn find(&self, train: &str, variant: Variant) -> Option<usize> {
        self.rows.iter().position(|r| r.train == train && r.variant == variant)
    }

    /// One line per (row, metric). Values are fractions in `[0, 1]` printed
    /// with round-trip precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("train,variant,err_pred,vae,joint,metric");
        for d in &self.test_domains {
            let _ = write!(s, ",{d}");
        }
        s.push_str(",average,shifted_average,same_domain\n");
        let flag = |b: bool| if b { "1" } else { "0" };
        for (i, r) in self.rows.iter().enumerate() {
            for m in [Metric::Dice, Metric::Iou] {
                let v = r.variant;
                let _ = write!(
                    s,
                    "{},{},{},{},{},{}",
                    r.train,
                    v.name(),
                    flag(v.err_pred),
                    flag(v.vae),
                    flag(v.joint),
                    m.name()
                );
                for x in r.values(m) {
                    let _ = write!(s, ",{x}");
                }
                let diag = self.diagonal(i).map(|j| self.test_domains[j].as_str()).unwrap_or("");
                let _ = writeln!(s, ",{},{},{diag}", self.row_average(i, m), self.shifted_average(i, m));
            }
        }
        s
    }

    /// Dice and IoU tables in percent; same-domain cells are starred.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        for (k, m) in [Metric::Dice, Metric::Iou].into_iter().enumerate() {
            if k > 0 {
                s.push('\n');
            }
            let title = match m {
                Metric::Dice => "Dice (%)",
                Metric::Iou => "IoU (%)",
            };
            let mut header = vec![
                "train".to_string(),
                "model".into(),
                "err-pred".into(),
                "vae".into(),
                "joint".into(),
            ];
            header.extend(self.test_domains.iter().cloned());
            header.push("avg".into());
            header.push("shifted avg".into());
            let mut body: Vec<Vec<String>> = Vec::new();
            for (i, r) in self.rows.iter().enumerate() {
                let tick = |b: bool| if b { "x".to_string() } else { String::new() };
                let v = r.variant;
                let mut line = vec![
                    r.train.clone(),
                    v.name().to_string(),
                    tick(v.err_pred),
                    tick(v.vae),
                    tick(v.joint),
                ];
                let diag = self.diagonal(i);
                for (j, &x) in r.values(m).iter().enumerate() {
                    let mut c = pct(x);
                    if Some(j) == diag {
                        c.push('*');
                    }
                    line.push(c);
                }
                line.push(pct(self.row_average(i, m)));
                line.push(pct(self.shifted_average(i, m)));
                body.push(line);
            }
            let widths: Vec<usize> = (0..header.len())
                .map(|c| {
                    body.iter()
                        .map(|l| l[c].len())
                        .chain([header[c].len(), 3])
                        .max()
                        .unwrap_or(3)
                })
                .collect();
            let _ = writeln!(s, "{title}\n");
            let row = |cells: &[String]| {
                let mut line = String::from("|");
                for (c, w) in cells.iter().zip(&widths) {
                    let _ = write!(line, " {c:<w$} |");
                }
                line
            };
            let _ = writeln!(s, "{}", row(&header));
            let mut rule = String::from("|");
            for (c, w) in widths.iter().enumerate() {
                let dashes = "-".repeat(*w);
                if c < 5 {
                    let _ = write!(rule, " {dashes} |");
                } else {
                    let _ = write!(rule, " {}: |", &dashes[1..]);
                }
            }
            let _ = writeln!(s, "{rule}");
            for l in &body {
                let _ = writeln!(s, "{}", row(l));
            }
        }
        s.push_str("\n`*` marks the same-domain test split.\n");
        s
    }
}

/// A trained pipeline to score: segmentation network plus optional predictor.
#[derive(Clone, Debug)]
pub struct Model {
    pub train: String,
    pub variant: Variant,
    pub seg: Network,
    pub err: Option<Network>,
}

/// Scores every model on every test set. Cells run in parallel and are
/// placed by (row, column), so the result does not depend on scheduling.
pub fn evaluate_matrix(models: &[Model], datasets: &[(String, Vec<Sample>)]) -> Result<MetricsMatrix> {
    if models.is_empty() || datasets.is_empty() {
        return Err(Error::Config(
            "evaluation needs at least one model and one test set".into(),
        ));
    }
    if let Some((d, _)) = datasets.iter().find(|(_, s)| s.is_empty()) {
        return Err(Error::Config(format!("test split of {d} is empty")));
    }
    if let Some(m) = models.iter().find(|m| m.variant.err_pred != m.err.is_some()) {
        return Err(Error::Config(format!(
            "model {}/{} has the wrong number of networks",
            m.train,
            m.variant.name()
        )));
    }
    let cells: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|i| (0..datasets.len()).map(move |j| (i, j)))
        .collect();
    let scores: Vec<Scores> = cells
        .par_iter()
        .map(|&(i, j)| {
            let m = &models[i];
            let mut p = Pipeline::new(m.seg.clone(), m.err.clone())?;
            let s = p.score(&datasets[j].1, m.variant.err_pred)?;
            debug_assert_eq!(p.latent_draws(), 0);
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let nd = datasets.len();
    Ok(MetricsMatrix {
        test_domains: datasets.iter().map(|(d, _)| d.clone()).collect(),
        rows: models
            .iter()
            .enumerate()
            .map(|(i, m)| MatrixRow {
                train: m.train.clone(),
                variant: m.variant,
                dice: scores[i * nd..(i + 1) * nd].iter().map(|s| s.dice).collect(),
                iou: scores[i * nd..(i + 1) * nd].iter().map(|s| s.iou).collect(),
            })
            .collect(),
    })
}
