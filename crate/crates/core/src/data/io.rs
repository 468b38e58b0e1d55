//! Dataset directories: `<root>/<domain>/{images,masks,fov}/<stem>.png`,
//! paired by file stem. PGM/PPM files are read as well.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{DynamicImage, ImageBuffer, Luma};

use super::synth::{synth_generate, Manifest, SynthDomain};
use super::{Sample, SplitSpec};
use crate::autograd::Tensor;
use crate::error::{Error, Result};

const EXTENSIONS: &[&str] = &["png", "pgm", "ppm", "pnm"];
/// Pixels darker than this on every channel are outside the field of view.
const FOV_THRESHOLD: f32 = 10.0 / 255.0;

#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn listing(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn find_stem(files: &[(String, PathBuf)], stem: &str) -> Option<PathBuf> {
    files.iter().find(|(s, _)| s == stem).map(|(_, p)| p.clone())
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| image_err(path, e))
}

type Plane = ImageBuffer<Luma<f32>, Vec<f32>>;

fn plane(w: u32, h: u32, data: Vec<f32>) -> Plane {
    ImageBuffer::from_raw(w, h, data).expect("buffer matches dimensions")
}

/// Single-channel intensities in `[0, 1]` (green for colour images) and the
/// field of view derived from near-black pixels.
fn read_fundus(path: &Path) -> Result<(Plane, Plane)> {
    let img = open(path)?;
    let (w, h) = (img.width(), img.height());
    if img.color().has_color() {
        let rgb = img.to_rgb32f();
        let green = rgb.pixels().map(|p| p.0[1]).collect();
        let fov = rgb
            .pixels()
            .map(|p| p.0.iter().any(|&c| c >= FOV_THRESHOLD) as u8 as f32)
            .collect();
        Ok((plane(w, h, green), plane(w, h, fov)))
    } else {
        let gray = img.to_luma32f();
        let fov = gray.pixels().map(|p| (p.0[0] >= FOV_THRESHOLD) as u8 as f32).collect();
        Ok((gray, plane(w, h, fov)))
    }
}

fn read_binary(path: &Path) -> Result<Plane> {
    let gray = open(path)?.to_luma32f();
    let (w, h) = gray.dimensions();
    Ok(plane(
        w,
        h,
        gray.pixels().map(|p| (p.0[0] >= 0.5) as u8 as f32).collect(),
    ))
}

fn to_tensor(p: &Plane, res: u32, filter: FilterType) -> Result<Tensor<f32>> {
    let resized = if p.dimensions() == (res, res) {
        p.clone()
    } else {
        imageops::resize(p, res, res, filter)
    };
    Tensor::new(vec![1, res as usize, res as usize], resized.into_raw())
}

/// Reads one image with its mask (and fov, if present) at `resolution`.
pub fn read_sample(image: &Path, mask: &Path, fov: Option<&Path>, resolution: usize, domain: &str) -> Result<Sample> {
    let res = resolution as u32;
    let (img, derived_fov) = read_fundus(image)?;
    let m = read_binary(mask)?;
    if m.dimensions() != img.dimensions() {
        return Err(Error::Data(format!(
            "{}: mask is {:?}, image is {:?}",
            mask.display(),
            m.dimensions(),
            img.dimensions()
        )));
    }
    let f = match fov {
        Some(p) => read_binary(p)?,
        None => derived_fov,
    };
    let id = image.file_stem().and_then(|s| s.to_str()).unwrap_or("sample");
    let rebin = |t: Tensor<f32>| t.map(|v| (v >= 0.5) as u8 as f32);
    Sample::new(
        to_tensor(&img, res, FilterType::Triangle)?.map(|v| v.clamp(0.0, 1.0)),
        rebin(to_tensor(&m, res, FilterType::Nearest)?),
        rebin(to_tensor(&f, res, FilterType::Nearest)?),
        domain,
        id,
    )
}

/// Reads a single image for inference: `[1, R, R]` intensities and fov.
pub fn read_image(path: &Path, resolution: usize) -> Result<(Tensor<f32>, Tensor<f32>, (u32, u32))> {
    let (img, fov) = read_fundus(path)?;
    let dims = img.dimensions();
    let res = resolution as u32;
    let fov = to_tensor(&fov, res, FilterType::Nearest)?.map(|v| (v >= 0.5) as u8 as f32);
    Ok((
        to_tensor(&img, res, FilterType::Triangle)?.map(|v| v.clamp(0.0, 1.0)),
        fov,
        dims,
    ))
}

/// All samples of `<root>/<domain>`, split under `seed`.
pub fn load_dataset(root: &Path, domain: &str, split: &SplitSpec, resolution: usize, seed: u64) -> Result<Splits> {
    let dir = root.join(domain);
    let images = listing(&dir.join("images"))?;
    if images.is_empty() {
        return Err(Error::Data(format!("no samples in {}", dir.join("images").display())));
    }
    let masks = listing(&dir.join("masks"))?;
    let fov_dir = dir.join("fov");
    let fovs = if fov_dir.is_dir() {
        listing(&fov_dir)?
    } else {
        Vec::new()
    };
    let mut samples = Vec::with_capacity(images.len());
    for (stem, path) in &images {
        let mask = find_stem(&masks, stem).ok_or_else(|| {
            Error::Data(format!(
                "{}: no mask named {stem} in {}",
                path.display(),
                dir.join("masks").display()
            ))
        })?;
        let fov = find_stem(&fovs, stem);
        samples.push(read_sample(path, &mask, fov.as_deref(), resolution, domain)?);
    }
    let idx = split.assign(samples.len(), seed)?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| samples[i].clone()).collect();
    Ok(Splits {
        train: pick(&idx.train),
        val: pick(&idx.val),
        test: pick(&idx.test),
    })
}

/// Writes an 8-bit grayscale PNG, mapping each value through `encode`.
pub fn save_gray(path: &Path, data: &[f32], w: usize, h: usize, encode: impl Fn(f32) -> u8) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let bytes: Vec<u8> = data.iter().map(|&v| encode(v)).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, bytes).ok_or_else(|| Error::Usage("pixel count mismatch".into()))?;
    buf.save(path).map_err(|e| image_err(path, e))
}

pub fn unit_to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Materializes samples in the dataset layout under `root`.
pub fn write_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    for s in samples {
        let dir = root.join(&s.domain);
        let (h, w) = (s.height(), s.width());
        let name = format!("{}.png", s.id);
        save_gray(&dir.join("images").join(&name), s.image.data(), w, h, unit_to_u8)?;
        save_gray(&dir.join("masks").join(&name), s.mask.data(), w, h, unit_to_u8)?;
        save_gray(&dir.join("fov").join(&name), s.fov.data(), w, h, unit_to_u8)?;
    }
    Ok(())
}

/// Generates a synthetic domain under `root` with its `manifest.txt`.
pub fn materialize(root: &Path, domain: &SynthDomain, n: usize, resolution: usize, seed: u64) -> Result<Manifest> {
    let samples = synth_generate(domain, n, resolution, seed)?;
    write_dataset(root, &samples)?;
    let manifest = Manifest {
        domain: domain.clone(),
        n,
        resolution,
        seed,
        ids: samples.iter().map(|s| s.id.clone()).collect(),
    };
    let path = root.join(&domain.name).join("manifest.txt");
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Writes a `res`x`res` plane resized to `dims` as an 8-bit PNG.
pub fn save_resized(path: &Path, data: &[f32], res: usize, dims: (u32, u32), encode: impl Fn(f32) -> u8) -> Result<()> {
    let src = plane(res as u32, res as u32, data.to_vec());
    let out = if dims == (res as u32, res as u32) {
        src
    } else {
        imageops::resize(&src, dims.0, dims.1, FilterType::Triangle)
    };
    save_gray(path, out.as_raw(), dims.0 as usize, dims.1 as usize, encode)
}

/// Number of images under `<root>/<domain>/images`.
pub fn count_samples(root: &Path, domain: &str) -> Result<usize> {
    listing(&root.join(domain).join("images")).map(|l| l.len())
}
