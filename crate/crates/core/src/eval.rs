//! Inference-time correction and overlap metrics.

use crate::autograd::{Graph, Tensor};
use crate::data::{binarize, make_batch, Sample};
use crate::error::{Error, Result};
use crate::nn::{ForwardMode, LatentMode, LatentSampler, NetKind, Network};

pub const THRESHOLD: f32 = 0.5;
/// Images per forward pass during evaluation.
const EVAL_BATCH: usize = 8;

fn counts(a: &[f32], b: &[f32], fov: &[f32]) -> (f64, f64, f64) {
    let (mut inter, mut na, mut nb) = (0.0, 0.0, 0.0);
    for ((&x, &y), &f) in a.iter().zip(b).zip(fov) {
        if f < 0.5 {
            continue;
        }
        let (x, y) = (x >= 0.5, y >= 0.5);
        inter += (x && y) as u8 as f64;
        na += x as u8 as f64;
        nb += y as u8 as f64;
    }
    (inter, na, nb)
}

/// `2|a ∩ b| / (|a| + |b|)` inside `fov`; 1 when both are empty.
pub fn dice(a: &[f32], b: &[f32], fov: &[f32]) -> f64 {
    let (i, na, nb) = counts(a, b, fov);
    if na + nb == 0.0 {
        1.0
    } else {
        2.0 * i / (na + nb)
    }
}

/// `|a ∩ b| / |a ∪ b|` inside `fov`; 1 when both are empty.
pub fn iou(a: &[f32], b: &[f32], fov: &[f32]) -> f64 {
    let (i, na, nb) = counts(a, b, fov);
    let union = na + nb - i;
    if union == 0.0 {
        1.0
    } else {
        i / union
    }
}

/// Dice equivalent of a Jaccard index.
pub fn dice_from_iou(j: f64) -> f64 {
    2.0 * j / (1.0 + j)
}

/// Number of 8-connected foreground components in a `w`-wide mask.
pub fn connected_components(mask: &[f32], w: usize) -> usize {
    let h = mask.len() / w;
    let mut seen = vec![false; mask.len()];
    let mut stack = Vec::new();
    let mut n = 0;
    for start in 0..mask.len() {
        if mask[start] < 0.5 || seen[start] {
            continue;
        }
        n += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(k) = stack.pop() {
            let (x, y) = ((k % w) as isize, (k / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] >= 0.5 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    n
}

/// `clamp(s + e, 0, 1)`.
pub fn apply_correction(s: &Tensor<f32>, e: &Tensor<f32>) -> Result<Tensor<f32>> {
    s.zip_map(e, |a, b| (a + b).clamp(0.0, 1.0))
}

/// Segmentation network with an optional error predictor, run in
/// evaluation mode. The latent sampler is threaded through every forward
/// pass; inference never draws from it.
pub struct Pipeline {
    pub seg: Network,
    pub err: Option<Network>,
    sampler: LatentSampler,
}

impl Pipeline {
    pub fn new(seg: Network, err: Option<Network>) -> Result<Self> {
        if seg.kind() != NetKind::Segmentation {
            return Err(Error::Usage(format!(
                "expected a segmentation network, got {}",
                seg.kind()
            )));
        }
        if let Some(e) = &err {
            if e.kind() != NetKind::Prediction || e.spec() != seg.spec() {
                return Err(Error::Usage("error predictor must match the segmentation spec".into()));
            }
        }
        Ok(Self {
            seg,
            err,
            sampler: LatentSampler::new(0),
        })
    }

    pub fn latent_draws(&self) -> u64 {
        self.sampler.draws()
    }

    fn check(&self, images: &Tensor<f32>) -> Result<()> {
        let r = self.seg.spec().resolution;
        match images.shape() {
            [_, 1, h, w] if *h == r && *w == r => Ok(()),
            s => Err(Error::dim(
                "segment",
                format!("images {s:?} do not match network resolution {r}"),
            )),
        }
    }

    /// Probability map `S` for normalized `images` `[N, 1, R, R]`.
    pub fn segment(&mut self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check(images)?;
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let pass = self.seg.forward(&mut g, &[x], &mut eval_mode(&mut self.sampler))?;
        Ok(g.value(pass.output()).clone())
    }

    /// Predicted error map `Ê` for `images` and segmentation `s`.
    pub fn predict_error(&mut self, images: &Tensor<f32>, s: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check(images)?;
        let err = self
            .err
            .as_mut()
            .ok_or_else(|| Error::Usage("pipeline has no error predictor".into()))?;
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let sv = g.constant(s.clone());
        let pass = err.forward(&mut g, &[x, sv], &mut eval_mode(&mut self.sampler))?;
        Ok(g.value(pass.output()).clone())
    }

    /// `S* = clamp(S + Ê, 0, 1)`.
    pub fn correct(&mut self, images: &Tensor<f32>, s: &Tensor<f32>) -> Result<Tensor<f32>> {
        let e = self.predict_error(images, s)?;
        apply_correction(s, &e)
    }

    /// Probability maps for `samples`, corrected when asked and possible.
    pub fn predict(&mut self, samples: &[Sample], with_correction: bool) -> Result<Vec<Tensor<f32>>> {
        if with_correction && self.err.is_none() {
            return Err(Error::Usage("correction requested without an error predictor".into()));
        }
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(EVAL_BATCH) {
            let batch = make_batch(&chunk.iter().collect::<Vec<_>>())?;
            let mut p = self.segment(&batch.images)?;
            if with_correction {
                p = self.correct(&batch.images, &p)?;
            }
            let plane = p.numel() / chunk.len();
            let shape = chunk[0].mask.shape().to_vec();
            for d in p.data().chunks(plane) {
                out.push(Tensor::new(shape.clone(), d.to_vec())?);
            }
        }
        Ok(out)
    }

    /// Mean Dice and IoU of the binarized predictions over `samples`.
    pub fn score(&mut self, samples: &[Sample], with_correction: bool) -> Result<Scores> {
        let preds = self.predict(samples, with_correction)?;
        Ok(Scores::of(samples, &preds))
    }
}

fn eval_mode(sampler: &mut LatentSampler) -> ForwardMode<'_> {
    ForwardMode {
        train: false,
        latent: LatentMode::Mean,
        sampler: Some(sampler),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub dice: f64,
    pub iou: f64,
}

impl Scores {
    pub fn of(samples: &[Sample], preds: &[Tensor<f32>]) -> Self {
        if samples.is_empty() {
            return Scores {
                dice: f64::NAN,
                iou: f64::NAN,
            };
        }
        let (mut d, mut j) = (0.0, 0.0);
        for (s, p) in samples.iter().zip(preds) {
            let b = binarize(p, THRESHOLD);
            d += dice(b.data(), s.mask.data(), s.fov.data());
            j += iou(b.data(), s.mask.data(), s.fov.data());
        }
        let n = samples.len() as f64;
        Scores {
            dice: d / n,
            iou: j / n,
        }
    }
}
