//! Samples, splits, field-of-view normalization and batching. Disk layout
//! lives in [`io`], the procedural vessel generator in [`synth`].

pub mod io;
pub mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub use io::{count_samples, load_dataset, materialize, write_dataset, Splits};
pub use synth::{synth_generate, vessel_break, Lesions, Manifest, SynthDomain, VesselBreak, PRESETS};

/// One image with its vessel mask and field of view, each `[1, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub fov: Tensor<f32>,
    pub domain: String,
    pub id: String,
}

impl Sample {
    pub fn new(image: Tensor<f32>, mask: Tensor<f32>, fov: Tensor<f32>, domain: &str, id: &str) -> Result<Self> {
        let s = image.shape();
        if s.len() != 3 || s[0] != 1 || mask.shape() != s || fov.shape() != s {
            return Err(Error::Data(format!(
                "sample {id}: image {:?}, mask {:?} and fov {:?} must all be [1, H, W]",
                s,
                mask.shape(),
                fov.shape()
            )));
        }
        // Vessel pixels only count inside the field of view.
        let mask = mask.zip_map(&fov, |m, f| if m >= 0.5 && f >= 0.5 { 1.0 } else { 0.0 })?;
        Ok(Self {
            image,
            mask,
            fov,
            domain: domain.to_string(),
            id: id.to_string(),
        })
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

/// Z-scores the image over field-of-view pixels; outside pixels become 0.
pub fn normalize_fov(sample: &Sample) -> Result<Sample> {
    let img = sample.image.data();
    let fov = sample.fov.data();
    let inside: Vec<f64> = img
        .iter()
        .zip(fov)
        .filter(|(_, &f)| f >= 0.5)
        .map(|(&v, _)| v as f64)
        .collect();
    if inside.is_empty() {
        return Err(Error::Data(format!("sample {}: empty field of view", sample.id)));
    }
    let n = inside.len() as f64;
    let mean = inside.iter().sum::<f64>() / n;
    let var = inside.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 1e-12 {
        return Err(Error::Data(format!(
            "sample {}: degenerate image, zero variance inside fov",
            sample.id
        )));
    }
    let inv = 1.0 / var.sqrt();
    let data = img
        .iter()
        .zip(fov)
        .map(|(&v, &f)| {
            if f >= 0.5 {
                ((v as f64 - mean) * inv) as f32
            } else {
                0.0
            }
        })
        .collect();
    Ok(Sample {
        image: Tensor::new(sample.image.shape().to_vec(), data)?,
        ..sample.clone()
    })
}

/// `1` where `p >= threshold`, else `0`.
pub fn binarize(p: &Tensor<f32>, threshold: f32) -> Tensor<f32> {
    p.map(|v| if v >= threshold { 1.0 } else { 0.0 })
}

/// Per-domain train/val/test counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSpec {
    pub fn new(train: usize, val: usize, test: usize) -> Self {
        Self { train, val, test }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    /// Standard splits of the five public fundus datasets.
    pub fn for_public(domain: &str) -> Option<Self> {
        let (a, b, c) = match domain.to_ascii_lowercase().as_str() {
            "drive" => (18, 2, 20),
            "stare" => (10, 2, 8),
            "chase" => (17, 5, 6),
            "aria" => (121, 5, 17),
            "hrf" => (26, 5, 14),
            _ => return None,
        };
        Some(Self::new(a, b, c))
    }

    /// Shuffles `0..n` under `seed` and cuts it into train, val and test.
    pub fn assign(&self, n: usize, seed: u64) -> Result<SplitIndices> {
        if n != self.total() {
            return Err(Error::Config(format!(
                "split {}/{}/{} needs {} samples, found {}",
                self.train,
                self.val,
                self.test,
                self.total(),
                n
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let test = order.split_off(self.train + self.val);
        let val = order.split_off(self.train);
        Ok(SplitIndices {
            train: order,
            val,
            test,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Network-ready stack of samples: normalized images, masks and fovs, each
/// `[N, 1, H, W]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub masks: Tensor<f32>,
    pub fovs: Tensor<f32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Normalizes each sample and stacks them.
pub fn make_batch(samples: &[&Sample]) -> Result<Batch> {
    let first = samples.first().ok_or_else(|| Error::Usage("empty batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut images = Vec::with_capacity(samples.len() * h * w);
    let mut masks = Vec::with_capacity(images.capacity());
    let mut fovs = Vec::with_capacity(images.capacity());
    for s in samples {
        if (s.height(), s.width()) != (h, w) {
            return Err(Error::Data(format!(
                "sample {} is {}x{}, batch is {}x{}",
                s.id,
                s.height(),
                s.width(),
                h,
                w
            )));
        }
        let norm = normalize_fov(s)?;
        images.extend_from_slice(norm.image.data());
        masks.extend_from_slice(s.mask.data());
        fovs.extend_from_slice(s.fov.data());
    }
    let shape = vec![samples.len(), 1, h, w];
    Ok(Batch {
        images: Tensor::new(shape.clone(), images)?,
        masks: Tensor::new(shape.clone(), masks)?,
        fovs: Tensor::new(shape, fovs)?,
    })
}

/// Splits `order` into consecutive batches of at most `size`.
pub fn batches<'a>(samples: &'a [Sample], order: &[usize], size: usize) -> Result<Vec<Batch>> {
    order
        .chunks(size.max(1))
        .map(|chunk| make_batch(&chunk.iter().map(|&i| &samples[i]).collect::<Vec<_>>()))
        .collect()
}
